"""Iterative scaling solvers.

Four algorithms share one driver:

* ``alg1``  -- relaxed-column scaling in multiplicative (c) form: each sweep
  rescales the current plan's rows to ``u_tilde`` and its columns toward a
  moving target ``v`` with exponent ``gamma / (1 + gamma)``.
* ``alg2``  -- the same iteration written with cumulative (d) scalings of the
  kernel; produces the same plans as ``alg1``.
* ``sk``    -- classical Sinkhorn-Knopp, both marginals hard.
* ``chizat`` -- both marginals relaxed (no zero pattern allowed).

Each algorithm is exposed as an infinite generator of :class:`ScalingState`
(``*_iterates``) and as a ``solve_*`` function that applies the stopping rule
and records a trace.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .core import InstanceError, ProblemInstance, Support, TransportPlan, validate_instance
from .divergence import chizat_objective, kl_matrix, objective

__all__ = [
    "Algorithm",
    "Termination",
    "Decision",
    "UnsupportedPattern",
    "SolverConfig",
    "ScalingState",
    "TraceRecord",
    "TRACE_COLUMNS",
    "SolveReport",
    "alg1_iterates",
    "alg2_iterates",
    "sk_iterates",
    "chizat_iterates",
    "stopping_check",
    "detect_period_two",
    "solve",
    "solve_alg1",
    "solve_alg2",
    "solve_sk",
    "solve_chizat",
]

OSCILLATION_WINDOW = 50
OSCILLATION_LAG2_TOL = 1e-10
OSCILLATION_LAG1_TOL = 1e-6


class Algorithm(str, enum.Enum):
    ALG1 = "alg1"
    ALG2 = "alg2"
    SK = "sk"
    CHIZAT = "chizat"


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    # iteration budget exhausted while the half-step residuals alternate
    SUSPECTED_INFEASIBLE = "suspected_infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


class Decision(enum.Enum):
    CONTINUE = "continue"
    CONVERGED = "converged"


class UnsupportedPattern(InstanceError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "alg1"
    tol_scaling: float = 1e-9
    tol_delta: float = 1e-12
    max_iter: int = 100_000
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None  # chizat only; defaults to the instance's gamma
    trace_every: int = 1
    layout: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm).value)
        if not (self.tol_scaling > 0 and self.tol_delta > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.trace_every < 1:
            raise ValueError("max_iter and trace_every must be >= 1")
        for name in ("gamma1", "gamma2"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class ScalingState:
    """Iterate ``l`` of a scaling algorithm.

    ``t`` is stored in ``support``'s layout. ``c1``/``c2`` are the per-sweep
    row/column factors, ``d1``/``d2`` their running products, so that
    ``t = d1 * K * d2`` up to rounding. ``col_sums_after_rows`` holds the
    column sums of the half-step plan (rows rescaled, columns not yet).
    """

    l: int
    t: np.ndarray
    v: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    sum_abs_delta: float
    col_sums_after_rows: np.ndarray
    support: Support = field(repr=False)

    @property
    def mass(self) -> float:
        return float(np.sum(self.support.entries(self.t)))

    def plan(self) -> TransportPlan:
        return self.support.to_plan(self.t)

    def matrix(self) -> np.ndarray:
        return self.plan().matrix

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.c1)) and np.all(np.isfinite(self.c2))
            and np.all(np.isfinite(self.v)) and math.isfinite(self.sum_abs_delta)
        )


TRACE_COLUMNS = (
    "iter",
    "sum_abs_delta",
    "log_delta_normalized",
    "max_c1_dev",
    "max_c2_dev",
    "objective_total",
    "row_residual",
    "col_residual",
)


@dataclass(frozen=True)
class TraceRecord:
    """One row of the convergence trace.

    ``log_delta_normalized`` is ``log(sum_abs_delta(l)) / log(sum_abs_delta(1))``;
    its sign flips when the first delta is below one. ``row_residual`` and
    ``col_residual`` are max relative deviations of the plan's sums from
    ``u_tilde`` and ``v_tilde``. ``objective_total`` is the objective the
    algorithm minimizes.
    """

    iter: int
    sum_abs_delta: float
    log_delta_normalized: float
    max_c1_dev: float
    max_c2_dev: float
    objective_total: float
    row_residual: float
    col_residual: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass(frozen=True, eq=False)
class SolveReport:
    algorithm: str
    plan: TransportPlan
    v_star: np.ndarray
    iterations: int
    termination: Termination
    trace: tuple[TraceRecord, ...]
    row_residual: float
    col_residual: float
    max_c1_dev: float
    max_c2_dev: float
    sum_abs_delta: float
    d1: np.ndarray
    d2: np.ndarray

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "termination": self.termination.value,
            "row_residual": self.row_residual,
            "col_residual": self.col_residual,
            "max_c1_dev": self.max_c1_dev,
            "max_c2_dev": self.max_c2_dev,
            "sum_abs_delta": self.sum_abs_delta,
        }


def _col_exponent(gamma: float) -> float:
    return gamma / (1.0 + gamma)


def _prepare(inst: ProblemInstance, layout: str) -> Support:
    validate_instance(inst).raise_for_errors()
    return Support(inst.pattern, layout)


def _multiplicative_iterates(inst: ProblemInstance, support: Support, relax: bool) -> Iterator[ScalingState]:
    # shared by alg1 (relax=True) and sk (relax=False, v frozen at v_tilde)
    u = inst.u_tilde
    t = support.pack(inst.kernel)
    v = inst.v_tilde.copy()
    d1 = np.ones(inst.m)
    d2 = np.ones(inst.n)
    a = _col_exponent(inst.gamma)
    damp = 1.0 / (1.0 + inst.gamma)
    l = 0
    while True:
        l += 1
        with np.errstate(all="ignore"):
            c1 = u / support.row_sums(t)
            s = support.scale_rows(t, c1)
            pre = support.col_sums(s)
            if relax:
                log_ratio = np.log(v / pre)
                c2 = np.exp(a * log_ratio)
                v_new = v * np.exp(-damp * log_ratio)
            else:
                c2 = v / pre
                v_new = v
            t_new = support.scale_cols(s, c2)
            delta = float(np.sum(np.abs(t_new - t)))
            # running products diverge when sk has no feasible limit
            d1 = c1 * d1
            d2 = c2 * d2
        t, v = t_new, v_new
        yield ScalingState(l, t, v, c1, c2, d1, d2, delta, pre, support)


def alg1_iterates(inst: ProblemInstance, layout: str = "auto") -> Iterator[ScalingState]:
    """Plans ``T(1), T(2), ...`` of the relaxed-column iteration, starting at ``T(0) = K``."""
    return _multiplicative_iterates(inst, _prepare(inst, layout), relax=True)


def sk_iterates(inst: ProblemInstance, layout: str = "auto") -> Iterator[ScalingState]:
    """Sinkhorn-Knopp plans, computed by rescaling the current plan.

    Algebraically identical to the cumulative-scaling form; working on the
    plan keeps the state bounded when the scalings diverge (infeasible
    marginals).
    """
    return _multiplicative_iterates(inst, _prepare(inst, layout), relax=False)


def _cumulative_iterates(
    inst: ProblemInstance, support: Support, row_exponent: float | None, col_exponent: float,
    v_of: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> Iterator[ScalingState]:
    u, vt = inst.u_tilde, inst.v_tilde
    k = support.pack(inst.kernel)
    t = k
    d1 = np.ones(inst.m)
    d2 = np.ones(inst.n)
    l = 0
    while True:
        l += 1
        with np.errstate(all="ignore"):
            row_ratio = u / support.row_sums(support.scale_cols(k, d2))
            d1n = row_ratio if row_exponent is None else np.exp(row_exponent * np.log(row_ratio))
            s = support.scale_rows(k, d1n)
            pre = support.col_sums(s)
            d2n = np.exp(col_exponent * np.log(vt / pre))
            t_new = support.scale_cols(s, d2n)
            delta = float(np.sum(np.abs(t_new - t)))
            c1 = d1n / d1
            c2 = d2n / d2
            v = v_of(d2n, t_new)
        yield ScalingState(l, t_new, v, c1, c2, d1n, d2n, delta, pre * d2, support)
        t, d1, d2 = t_new, d1n, d2n


def alg2_iterates(inst: ProblemInstance, layout: str = "auto") -> Iterator[ScalingState]:
    """Cumulative-scaling form of :func:`alg1_iterates` (same plans).

    ``d1 = u / (K d2)``, ``d2 = (v_tilde / (d1 K))**(gamma/(1+gamma))``,
    ``T = diag(d1) K diag(d2)``, and ``v = d2**(-1/gamma) * v_tilde``.
    """
    support = _prepare(inst, layout)
    inv_gamma = 1.0 / inst.gamma
    vt = inst.v_tilde

    def v_of(d2, _t):
        return np.exp(-inv_gamma * np.log(d2)) * vt

    return _cumulative_iterates(inst, support, None, _col_exponent(inst.gamma), v_of)


def chizat_iterates(
    inst: ProblemInstance, gamma1: float, gamma2: float | None = None, layout: str = "auto"
) -> Iterator[ScalingState]:
    """Both-marginals-relaxed scaling. ``v`` is reported as the plan's column sums."""
    if len(inst.pattern):
        raise UnsupportedPattern("chizat scaling does not support forbidden pairs")
    if not np.all(inst.ideal.values == 1.0):
        raise UnsupportedPattern("chizat scaling requires an all-ones ideal plan")
    if gamma1 is None or not gamma1 > 0:
        raise ValueError("chizat scaling needs a positive gamma1")
    gamma2 = inst.gamma if gamma2 is None else gamma2
    support = _prepare(inst, layout)
    return _cumulative_iterates(
        inst, support, _col_exponent(gamma1), _col_exponent(gamma2),
        lambda _d2, t: support.col_sums(t),
    )


def stopping_check(state: ScalingState, cfg: SolverConfig) -> Decision:
    """Converged when both scaling factors are within ``tol_scaling`` of one
    and the last step moved less than ``tol_delta`` of the total mass."""
    if state.l < 1:
        raise ValueError("stopping_check needs at least one iteration")
    if (
        np.max(np.abs(state.c1 - 1.0)) < cfg.tol_scaling
        and np.max(np.abs(state.c2 - 1.0)) < cfg.tol_scaling
        and state.sum_abs_delta < cfg.tol_delta * state.mass
    ):
        return Decision.CONVERGED
    return Decision.CONTINUE


def detect_period_two(
    residuals, lag2_tol: float = OSCILLATION_LAG2_TOL, lag1_tol: float = OSCILLATION_LAG1_TOL
) -> bool:
    """True if a sequence of residual vectors repeats with period two but not one."""
    r = np.asarray(list(residuals), dtype=float)
    if r.shape[0] < 3:
        return False
    lag1 = np.max(np.abs(r[1:] - r[:-1]), axis=1)
    lag2 = np.max(np.abs(r[2:] - r[:-2]), axis=1)
    return bool(np.max(lag2) < lag2_tol and np.min(lag1) > lag1_tol)


def _rel_dev(x: np.ndarray, target: np.ndarray) -> float:
    return float(np.max(np.abs(x - target) / target))


def _drive(
    inst: ProblemInstance, cfg: SolverConfig, iterates: Iterator[ScalingState],
    objective_fn: Callable[[TransportPlan], float], watch_oscillation: bool = False,
) -> SolveReport:
    trace: list[TraceRecord] = []
    window: deque = deque(maxlen=2 * OSCILLATION_WINDOW)
    first_log = None
    last: ScalingState | None = None
    termination = None

    def record(state: ScalingState) -> TraceRecord:
        plan = state.plan()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.float64(np.log(state.sum_abs_delta)) / np.float64(first_log))
        return TraceRecord(
            iter=state.l,
            sum_abs_delta=state.sum_abs_delta,
            log_delta_normalized=ratio,
            max_c1_dev=float(np.max(np.abs(state.c1 - 1.0))),
            max_c2_dev=float(np.max(np.abs(state.c2 - 1.0))),
            objective_total=objective_fn(plan),
            row_residual=_rel_dev(plan.row_sums(), inst.u_tilde),
            col_residual=_rel_dev(plan.col_sums(), inst.v_tilde),
        )

    for state in iterates:
        if not state.is_finite():
            termination = Termination.NUMERICAL_FAILURE
            break
        last = state
        if state.l == 1:
            with np.errstate(divide="ignore"):
                first_log = np.log(state.sum_abs_delta)
        if watch_oscillation and state.l > cfg.max_iter - OSCILLATION_WINDOW:
            window.append(state.col_sums_after_rows - inst.v_tilde)
            window.append(state.support.col_sums(state.t) - inst.v_tilde)
        if stopping_check(state, cfg) is Decision.CONVERGED:
            termination = Termination.CONVERGED
        elif state.l >= cfg.max_iter:
            termination = Termination.MAX_ITERATIONS
            if watch_oscillation and detect_period_two(window):
                termination = Termination.SUSPECTED_INFEASIBLE
        if termination is not None or state.l % cfg.trace_every == 0:
            trace.append(record(state))
        if termination is not None:
            break

    if last is None:
        support = Support(inst.pattern, cfg.layout)
        k = support.pack(inst.kernel)
        plan = support.to_plan(k)
        d1, d2, v_star = np.ones(inst.m), np.ones(inst.n), inst.v_tilde.copy()
        iterations, c_dev, delta = 0, (math.nan, math.nan), math.nan
    else:
        plan = last.plan()
        d1, d2, v_star = last.d1, last.d2, last.v
        iterations = last.l
        c_dev = (float(np.max(np.abs(last.c1 - 1.0))), float(np.max(np.abs(last.c2 - 1.0))))
        delta = last.sum_abs_delta
    return SolveReport(
        algorithm=cfg.algorithm,
        plan=plan,
        v_star=np.array(v_star),
        iterations=iterations,
        termination=termination,
        trace=tuple(trace),
        row_residual=_rel_dev(plan.row_sums(), inst.u_tilde),
        col_residual=_rel_dev(plan.col_sums(), inst.v_tilde),
        max_c1_dev=c_dev[0],
        max_c2_dev=c_dev[1],
        sum_abs_delta=delta,
        d1=np.array(d1),
        d2=np.array(d2),
    )


def _with_algorithm(cfg: SolverConfig | None, algorithm: Algorithm) -> SolverConfig:
    if cfg is None:
        return SolverConfig(algorithm=algorithm.value)
    if cfg.algorithm != algorithm.value:
        from dataclasses import replace

        return replace(cfg, algorithm=algorithm.value)
    return cfg


def solve_alg1(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolveReport:
    cfg = _with_algorithm(cfg, Algorithm.ALG1)
    return _drive(inst, cfg, alg1_iterates(inst, cfg.layout), lambda p: objective(inst, p).total)


def solve_alg2(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolveReport:
    cfg = _with_algorithm(cfg, Algorithm.ALG2)
    return _drive(inst, cfg, alg2_iterates(inst, cfg.layout), lambda p: objective(inst, p).total)


def solve_sk(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolveReport:
    """Classical Sinkhorn-Knopp.

    When the exact marginals are unattainable the iteration does not settle;
    if the budget runs out while the half-step column residuals alternate
    with period two, the report says ``SUSPECTED_INFEASIBLE``. This is a
    heuristic, not a certificate; see
    :func:`~constrained_ot.core.check_feasibility_exact`.
    """
    cfg = _with_algorithm(cfg, Algorithm.SK)
    return _drive(
        inst, cfg, sk_iterates(inst, cfg.layout), lambda p: kl_matrix(p, inst.kernel),
        watch_oscillation=True,
    )


def solve_chizat(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolveReport:
    cfg = _with_algorithm(cfg, Algorithm.CHIZAT)
    gamma2 = inst.gamma if cfg.gamma2 is None else cfg.gamma2
    iterates = chizat_iterates(inst, cfg.gamma1, gamma2, cfg.layout)
    return _drive(inst, cfg, iterates, lambda p: chizat_objective(inst, p, cfg.gamma1, gamma2))


_SOLVERS = {
    Algorithm.ALG1: solve_alg1,
    Algorithm.ALG2: solve_alg2,
    Algorithm.SK: solve_sk,
    Algorithm.CHIZAT: solve_chizat,
}


def solve(inst: ProblemInstance, cfg: SolverConfig | None = None) -> SolveReport:
    cfg = cfg or SolverConfig()
    return _SOLVERS[Algorithm(cfg.algorithm)](inst, cfg)
