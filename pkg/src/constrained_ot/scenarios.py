"""Seeded instance generators.

All draws come from numpy's PCG64 generator seeded with the given integer,
in a fixed order: source masses, target masses, the full cost matrix
row-major, then (for random instances) the zero pattern. The same seed
therefore yields the same instance on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IdealPlan, InstanceError, ProblemInstance, ZeroPattern

__all__ = [
    "EvScenarioConfig",
    "PatternSamplingFailed",
    "ev_zero_pattern",
    "generate_ev_instance",
    "generate_random_instance",
]

MAX_PATTERN_ATTEMPTS = 1000


class PatternSamplingFailed(InstanceError):
    pass


@dataclass(frozen=True)
class EvScenarioConfig:
    """EV charging scenario: ``m`` vehicles (sources), ``n`` providers (targets)."""

    m: int = 10_000
    n: int = 10
    seed: int = 0
    gamma0: float = 1.99
    gamma: float = 1.005

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValueError("need at least two vehicles and two providers")
        if not (self.gamma0 > 0 and self.gamma > 0):
            raise ValueError("gamma0 and gamma must be positive")


def _open_unit(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    x = rng.random(size)
    while True:
        bad = x == 0.0
        if not bad.any():
            return x
        x[bad] = rng.random(int(bad.sum()))


def ev_zero_pattern(m: int, n: int) -> ZeroPattern:
    """Vehicles 2, 4, 6, ... cannot be served by providers 2, 4, ... (1-based).

    With 0-based indices these are the odd rows and odd columns, giving
    ``(m // 2) * (n // 2)`` forbidden pairs.
    """
    pairs = [(i, j) for i in range(1, m, 2) for j in range(1, n, 2)]
    return ZeroPattern(m, n, pairs)


def generate_ev_instance(cfg: EvScenarioConfig) -> ProblemInstance:
    """Demands, nominal supplies and costs iid uniform on (0, 1); ideal plan all ones.

    Every call re-draws everything from ``cfg.seed``.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    u = _open_unit(rng, cfg.m)
    v = _open_unit(rng, cfg.n)
    cost = _open_unit(rng, (cfg.m, cfg.n))
    pattern = ev_zero_pattern(cfg.m, cfg.n)
    cost[~pattern.allowed] = 0.0
    return ProblemInstance(u, v, cost, pattern, IdealPlan.ones(pattern), cfg.gamma0, cfg.gamma)


def generate_random_instance(
    m: int, n: int, zero_density: float = 0.0, seed: int = 0, gamma0: float = 1.0, gamma: float = 1.0
) -> ProblemInstance:
    """Random instance with ``round(zero_density * m * n)`` forbidden pairs.

    The pattern is redrawn until every row and column keeps an allowed entry.

    Raises
    ------
    PatternSamplingFailed
        If no admissible pattern is found in ``MAX_PATTERN_ATTEMPTS`` draws.
    """
    if not 0.0 <= zero_density < 1.0:
        raise ValueError("zero_density must lie in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = _open_unit(rng, m)
    v = _open_unit(rng, n)
    cost = _open_unit(rng, (m, n))
    count = int(round(zero_density * m * n))
    pattern = None
    for _ in range(MAX_PATTERN_ATTEMPTS):
        flat = rng.choice(m * n, size=count, replace=False) if count else np.empty(0, dtype=int)
        candidate = ZeroPattern(m, n, zip(*np.divmod(flat, n)), check_coverage=False)
        if not candidate.coverage_violations():
            pattern = candidate
            break
    if pattern is None:
        raise PatternSamplingFailed(
            f"no {m}x{n} pattern with {count} forbidden pairs kept every row and column covered"
        )
    cost[~pattern.allowed] = 0.0
    return ProblemInstance(u, v, cost, pattern, IdealPlan.ones(pattern), gamma0, gamma)
