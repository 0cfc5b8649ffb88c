"""Problem data for entropic optimal transport with forbidden routes.

A problem is an ``m x n`` transport plan whose entries on a prescribed set of
(source, target) pairs are forced to zero. Everything that is indexed by the
plan (kernel, ideal plan, iterates) is stored as a flat vector over the
*allowed* entries, in row-major order, together with the :class:`ZeroPattern`
that defines those entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np

__all__ = [
    "InstanceError",
    "ZeroRowInPattern",
    "ZeroColumnInPattern",
    "InvalidPattern",
    "NonpositiveMarginal",
    "DimensionMismatch",
    "NonpositiveIdealEntry",
    "NonzeroIdealOnPattern",
    "NonfiniteCost",
    "NonpositiveRegularization",
    "PatternMismatch",
    "KernelUnderflowError",
    "KernelOverflowError",
    "UnbalancedInput",
    "ZeroPattern",
    "MaskedMatrix",
    "Kernel",
    "IdealPlan",
    "TransportPlan",
    "ProblemInstance",
    "ValidationResult",
    "Support",
    "validate_instance",
    "build_kernel",
    "check_feasibility_exact",
    "BALANCE_RTOL",
]

BALANCE_RTOL = 1e-9


class InstanceError(ValueError):
    """Base class for malformed or unsolvable problem data."""


class ZeroRowInPattern(InstanceError):
    def __init__(self, i: int):
        super().__init__(f"row {i} is entirely forbidden by the zero pattern")
        self.index = i


class ZeroColumnInPattern(InstanceError):
    def __init__(self, j: int):
        super().__init__(f"column {j} is entirely forbidden by the zero pattern")
        self.index = j


class InvalidPattern(InstanceError):
    pass


class NonpositiveMarginal(InstanceError):
    pass


class DimensionMismatch(InstanceError):
    pass


class NonpositiveIdealEntry(InstanceError):
    pass


class NonzeroIdealOnPattern(InstanceError):
    pass


class NonfiniteCost(InstanceError):
    pass


class NonpositiveRegularization(InstanceError):
    pass


class PatternMismatch(InstanceError):
    pass


class KernelUnderflowError(InstanceError):
    """An allowed kernel entry evaluated to zero.

    A silent zero would change the effective zero pattern, so it is refused.
    Raise ``gamma0`` or shift the costs.
    """


class KernelOverflowError(InstanceError):
    pass


class UnbalancedInput(InstanceError):
    pass


class ZeroPattern:
    """Set of forbidden ``(i, j)`` pairs of an ``m x n`` plan (0-based).

    Parameters
    ----------
    m, n : int
        Plan dimensions.
    forbidden : iterable of (int, int)
        Forbidden pairs. Duplicates and out-of-range pairs are rejected.
    check_coverage : bool, default True
        Raise if some row or column is entirely forbidden. Loaders turn this
        off so that :func:`validate_instance` can report every violation.
    """

    def __init__(self, m: int, n: int, forbidden: Iterable[Sequence[int]] = (), check_coverage: bool = True):
        if m < 1 or n < 1:
            raise InvalidPattern(f"dimensions must be positive, got m={m}, n={n}")
        pairs = [(int(i), int(j)) for i, j in forbidden]
        unique = set(pairs)
        if len(unique) != len(pairs):
            raise InvalidPattern("duplicate pairs in zero pattern")
        for i, j in pairs:
            if not (0 <= i < m and 0 <= j < n):
                raise InvalidPattern(f"pair ({i}, {j}) out of range for a {m}x{n} plan")
        self.m = int(m)
        self.n = int(n)
        self.forbidden = frozenset(unique)
        allowed = np.ones((self.m, self.n), dtype=bool)
        if pairs:
            idx = np.array(pairs)
            allowed[idx[:, 0], idx[:, 1]] = False
        allowed.flags.writeable = False
        self.allowed = allowed
        rows, cols = np.nonzero(allowed)
        rows.flags.writeable = False
        cols.flags.writeable = False
        self.rows = rows
        self.cols = cols
        if check_coverage:
            problems = self.coverage_violations()
            if problems:
                raise problems[0]

    @classmethod
    def from_mask(cls, allowed: np.ndarray, check_coverage: bool = True) -> "ZeroPattern":
        allowed = np.asarray(allowed, dtype=bool)
        m, n = allowed.shape
        pairs = zip(*np.nonzero(~allowed))
        return cls(m, n, pairs, check_coverage=check_coverage)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        """Number of allowed entries."""
        return int(self.rows.size)

    def coverage_violations(self) -> list[InstanceError]:
        out: list[InstanceError] = []
        out.extend(ZeroRowInPattern(int(i)) for i in np.flatnonzero(~self.allowed.any(axis=1)))
        out.extend(ZeroColumnInPattern(int(j)) for j in np.flatnonzero(~self.allowed.any(axis=0)))
        return out

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.forbidden

    def __len__(self) -> int:
        return len(self.forbidden)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ZeroPattern):
            return NotImplemented
        return self.shape == other.shape and self.forbidden == other.forbidden

    def __hash__(self) -> int:
        return hash((self.m, self.n, self.forbidden))

    def __repr__(self) -> str:
        return f"ZeroPattern(m={self.m}, n={self.n}, forbidden={len(self.forbidden)})"

    def sorted_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.forbidden)


@dataclass(frozen=True, eq=False)
class MaskedMatrix:
    """An ``m x n`` matrix that is structurally zero on a :class:`ZeroPattern`.

    ``values`` holds the allowed entries in row-major order.
    """

    pattern: ZeroPattern
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.pattern.nnz:
            raise DimensionMismatch(
                f"expected {self.pattern.nnz} allowed entries, got {values.size}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_matrix(cls, matrix, pattern: ZeroPattern):
        """Build from a dense array; entries on the pattern must be exactly zero."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != pattern.shape:
            raise DimensionMismatch(f"matrix shape {matrix.shape} != pattern shape {pattern.shape}")
        if np.any(matrix[~pattern.allowed] != 0):
            raise PatternMismatch("nonzero entry on a forbidden pair")
        return cls(pattern, matrix[pattern.rows, pattern.cols])

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape

    @property
    def matrix(self) -> np.ndarray:
        out = np.zeros(self.pattern.shape)
        out[self.pattern.rows, self.pattern.cols] = self.values
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.pattern.rows, weights=self.values, minlength=self.pattern.m)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.pattern.cols, weights=self.values, minlength=self.pattern.n)

    def triples(self) -> Iterator[tuple[int, int, float]]:
        for i, j, x in zip(self.pattern.rows.tolist(), self.pattern.cols.tolist(), self.values.tolist()):
            yield i, j, x


class Kernel(MaskedMatrix):
    pass


class IdealPlan(MaskedMatrix):
    @classmethod
    def ones(cls, pattern: ZeroPattern) -> "IdealPlan":
        return cls(pattern, np.ones(pattern.nnz))


class TransportPlan(MaskedMatrix):
    pass


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Full input of a solve.

    ``cost`` is a dense ``m x n`` array whose entries on the pattern are
    ignored. ``gamma0`` weights the entropic term, ``gamma`` the penalty on
    the column marginal.
    """

    u_tilde: np.ndarray
    v_tilde: np.ndarray
    cost: np.ndarray
    pattern: ZeroPattern
    ideal: IdealPlan
    gamma0: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("u_tilde", "v_tilde", "cost"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma0", float(self.gamma0))
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def create(cls, u_tilde, v_tilde, cost, forbidden=(), ideal=None, gamma0=1.0, gamma=1.0):
        """Convenience constructor.

        ``ideal`` may be None (all ones on the allowed entries) or a dense
        ``m x n`` array. Coverage is not enforced here; call
        :func:`validate_instance`.
        """
        u = np.asarray(u_tilde, dtype=float).ravel()
        v = np.asarray(v_tilde, dtype=float).ravel()
        pattern = ZeroPattern(u.size, v.size, forbidden, check_coverage=False)
        if ideal is None:
            ideal_plan = IdealPlan.ones(pattern)
        elif isinstance(ideal, IdealPlan):
            ideal_plan = ideal
        else:
            ideal_plan = IdealPlan.from_matrix(ideal, pattern)
        return cls(u, v, np.asarray(cost, dtype=float), pattern, ideal_plan, gamma0, gamma)

    @property
    def m(self) -> int:
        return self.pattern.m

    @property
    def n(self) -> int:
        return self.pattern.n

    @cached_property
    def kernel(self) -> Kernel:
        return build_kernel(self.cost, self.ideal, self.gamma0, self.pattern)

    def replace(self, **changes) -> "ProblemInstance":
        fields = dict(
            u_tilde=self.u_tilde, v_tilde=self.v_tilde, cost=self.cost, pattern=self.pattern,
            ideal=self.ideal, gamma0=self.gamma0, gamma=self.gamma,
        )
        fields.update(changes)
        return ProblemInstance(**fields)


@dataclass
class ValidationResult:
    errors: list[InstanceError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok

    def raise_for_errors(self) -> None:
        if self.errors:
            raise self.errors[0]


def validate_instance(inst: ProblemInstance) -> ValidationResult:
    """Check every invariant of ``inst`` and collect all violations."""
    errors: list[InstanceError] = []
    m, n = inst.pattern.shape
    if inst.u_tilde.shape != (m,):
        errors.append(DimensionMismatch(f"u_tilde has shape {inst.u_tilde.shape}, expected ({m},)"))
    if inst.v_tilde.shape != (n,):
        errors.append(DimensionMismatch(f"v_tilde has shape {inst.v_tilde.shape}, expected ({n},)"))
    if inst.cost.shape != (m, n):
        errors.append(DimensionMismatch(f"cost has shape {inst.cost.shape}, expected ({m}, {n})"))
    elif not np.all(np.isfinite(inst.cost[inst.pattern.allowed])):
        errors.append(NonfiniteCost("cost must be finite on allowed entries"))
    if inst.ideal.pattern != inst.pattern:
        errors.append(PatternMismatch("ideal plan uses a different zero pattern"))
    elif not np.all(inst.ideal.values > 0):
        errors.append(NonpositiveIdealEntry("ideal plan must be strictly positive off the pattern"))
    errors.extend(inst.pattern.coverage_violations())
    for name, vec in (("u_tilde", inst.u_tilde), ("v_tilde", inst.v_tilde)):
        if not np.all(np.isfinite(vec)) or np.any(vec <= 0):
            errors.append(NonpositiveMarginal(f"{name} must be finite and strictly positive"))
    for name in ("gamma0", "gamma"):
        val = getattr(inst, name)
        if not (np.isfinite(val) and val > 0):
            errors.append(NonpositiveRegularization(f"{name} must be positive, got {val}"))
    return ValidationResult(errors)


def build_kernel(cost, ideal: IdealPlan, gamma0: float, pattern: ZeroPattern) -> Kernel:
    """``k_ij = ideal_ij * exp(-cost_ij / gamma0)`` off the pattern, zero on it."""
    cost = np.asarray(cost, dtype=float)
    if cost.shape != pattern.shape:
        raise DimensionMismatch(f"cost shape {cost.shape} != pattern shape {pattern.shape}")
    if ideal.pattern != pattern:
        raise PatternMismatch("ideal plan uses a different zero pattern")
    if not gamma0 > 0:
        raise NonpositiveRegularization(f"gamma0 must be positive, got {gamma0}")
    c = cost[pattern.rows, pattern.cols]
    with np.errstate(over="ignore", under="ignore"):
        k = ideal.values * np.exp(-c / gamma0)
    if np.any(k == 0):
        i, j = pattern.rows[k == 0][0], pattern.cols[k == 0][0]
        raise KernelUnderflowError(
            f"kernel entry ({i}, {j}) underflows to zero; increase gamma0 or shift costs"
        )
    if not np.all(np.isfinite(k)):
        raise KernelOverflowError("kernel entry overflows; increase gamma0 or shift costs")
    return Kernel(pattern, k)


def check_feasibility_exact(inst: ProblemInstance, rtol: float = BALANCE_RTOL) -> bool:
    """Decide whether a plan with row sums ``u_tilde`` and column sums ``v_tilde`` exists.

    Solves a max-flow problem on the bipartite graph of allowed pairs:
    source -> row i (capacity u_i), row i -> column j (uncapacitated),
    column j -> sink (capacity v_j). The marginals are exactly attainable
    iff the maximum flow saturates every source edge.

    Raises
    ------
    UnbalancedInput
        If ``|sum(u) - sum(v)| > rtol * max(sum(u), sum(v))``.
    """
    su, sv = float(np.sum(inst.u_tilde)), float(np.sum(inst.v_tilde))
    if abs(su - sv) > rtol * max(su, sv):
        raise UnbalancedInput(f"sum(u_tilde)={su!r} differs from sum(v_tilde)={sv!r}")
    g = nx.DiGraph()
    for i, u in enumerate(inst.u_tilde.tolist()):
        g.add_edge("s", ("r", i), capacity=u)
    for j, v in enumerate(inst.v_tilde.tolist()):
        g.add_edge(("c", j), "t", capacity=v)
    for i, j in zip(inst.pattern.rows.tolist(), inst.pattern.cols.tolist()):
        g.add_edge(("r", i), ("c", j))
    flow = nx.maximum_flow_value(g, "s", "t")
    return flow >= su - rtol * max(su, sv)


class Support:
    """Storage layout for iterates over the allowed entries.

    ``"dense"`` keeps a full ``m x n`` array with structural zeros;
    ``"masked"`` keeps only the allowed entries with row/column index maps.
    ``"auto"`` picks dense when fewer than ``dense_threshold * m * n`` pairs
    are forbidden. Both layouts evaluate products in the same order.
    """

    def __init__(self, pattern: ZeroPattern, layout: str = "auto", dense_threshold: float = 0.5):
        if layout == "auto":
            layout = "dense" if len(pattern) < dense_threshold * pattern.m * pattern.n else "masked"
        if layout not in ("dense", "masked"):
            raise ValueError(f"unknown layout {layout!r}")
        self.pattern = pattern
        self.layout = layout
        self.dense = layout == "dense"
        self._rows = pattern.rows
        self._cols = pattern.cols

    def pack(self, mm: MaskedMatrix) -> np.ndarray:
        if mm.pattern != self.pattern:
            raise PatternMismatch("matrix pattern differs from support pattern")
        return mm.matrix if self.dense else mm.values.copy()

    def entries(self, x: np.ndarray) -> np.ndarray:
        """Allowed entries of ``x`` in row-major order."""
        return x[self._rows, self._cols] if self.dense else x

    def to_plan(self, x: np.ndarray) -> TransportPlan:
        return TransportPlan(self.pattern, self.entries(x))

    def row_sums(self, x: np.ndarray) -> np.ndarray:
        if self.dense:
            return x.sum(axis=1)
        return np.bincount(self._rows, weights=x, minlength=self.pattern.m)

    def col_sums(self, x: np.ndarray) -> np.ndarray:
        if self.dense:
            return x.sum(axis=0)
        return np.bincount(self._cols, weights=x, minlength=self.pattern.n)

    def scale_rows(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        return r[:, None] * x if self.dense else r[self._rows] * x

    def scale_cols(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return x * c[None, :] if self.dense else x * c[self._cols]
