"""Optimality certificates and a brute-force oracle for tiny problems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .core import InstanceError, MaskedMatrix, ProblemInstance, TransportPlan, ZeroPattern, validate_instance
from .divergence import kl_terms, objective
from .solvers import SolveReport

__all__ = [
    "OptimalityReport",
    "DisconnectedSupport",
    "TooLarge",
    "check_kkt",
    "check_positivity",
    "check_limit_properties",
    "oracle_minimize",
    "recover_scalings",
]

ORACLE_GRID = 64
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DisconnectedSupport(InstanceError):
    pass


class TooLarge(InstanceError):
    pass


@dataclass(frozen=True)
class OptimalityReport:
    """Residuals of a candidate optimum.

    ``fixed_point_residual`` is the largest relative violation of
    ``t = d1 k d2``, ``d1 = u / (K d2)`` and
    ``d2 = (v_tilde / (d1 K))**(gamma/(1+gamma))`` for the best-fitting
    positive scalings. ``row_residual`` and ``column_residual`` compare the
    plan's sums with ``u_tilde`` and ``v_star``; ``balance_residual`` compares
    the total masses of ``v_star`` and ``u_tilde``.
    """

    fixed_point_residual: float
    row_residual: float
    balance_residual: float
    min_support_entry: float
    positivity_ok: bool
    column_residual: float = math.nan
    v_star_positive: bool = True
    components: int = 1
    violations: tuple[str, ...] = ()

    def residuals(self) -> dict:
        return {
            "fixed_point_residual": self.fixed_point_residual,
            "row_residual": self.row_residual,
            "balance_residual": self.balance_residual,
            "column_residual": self.column_residual,
        }

    def failures(self, tol: float) -> list[str]:
        out = [f"{k}={v:.3e} >= {tol:g}" for k, v in self.residuals().items() if not v < tol]
        if not self.positivity_ok:
            out.append("positivity_ok=false")
        if not self.v_star_positive:
            out.append("v_star has a nonpositive entry")
        return out

    def ok(self, tol: float) -> bool:
        return not self.failures(tol)

    def as_dict(self) -> dict:
        return {
            "fixed_point_residual": self.fixed_point_residual,
            "row_residual": self.row_residual,
            "balance_residual": self.balance_residual,
            "column_residual": self.column_residual,
            "min_support_entry": self.min_support_entry,
            "positivity_ok": self.positivity_ok,
            "v_star_positive": self.v_star_positive,
            "components": self.components,
            "violations": list(self.violations),
        }


def _as_matrix(plan, pattern: ZeroPattern) -> np.ndarray:
    if isinstance(plan, MaskedMatrix):
        if plan.pattern != pattern:
            raise InstanceError("plan uses a different zero pattern")
        return plan.matrix
    mat = np.asarray(plan, dtype=float)
    if mat.shape != pattern.shape:
        raise InstanceError(f"plan shape {mat.shape} != {pattern.shape}")
    return mat


def check_positivity(plan, pattern: ZeroPattern) -> bool:
    """True iff every allowed entry is > 0 and every forbidden entry is exactly 0."""
    mat = _as_matrix(plan, pattern)
    return bool(np.all(mat[pattern.allowed] > 0) and np.all(mat[~pattern.allowed] == 0))


def _support_components(pattern: ZeroPattern) -> tuple[int, np.ndarray]:
    m, n = pattern.shape
    adj = sp.coo_matrix(
        (np.ones(pattern.nnz), (pattern.rows, m + pattern.cols)), shape=(m + n, m + n)
    )
    return connected_components(adj, directed=False)


def recover_scalings(inst: ProblemInstance, t_entries: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Positive ``d1, d2`` with ``t ~= d1 k d2`` on the allowed entries.

    Fits ``log t - log k = log d1_i + log d2_j`` by least squares. The fit
    leaves one multiplicative degree of freedom per connected component of
    the support graph; it is fixed so the column relation
    ``d2 = (v_tilde / (d1 K))**(gamma/(1+gamma))`` holds on average in log
    space (the row relation is invariant under that freedom).
    """
    pat = inst.pattern
    m, n = pat.shape
    ncomp, labels = _support_components(pat)
    y = np.log(t_entries) - np.log(inst.kernel.values)

    # pin the first column node of each component to zero
    col_labels = labels[m:]
    pinned = np.zeros(n, dtype=bool)
    for c in range(ncomp):
        cols = np.flatnonzero(col_labels == c)
        pinned[cols[0]] = True
    free_cols = np.flatnonzero(~pinned)
    col_index = -np.ones(n, dtype=int)
    col_index[free_cols] = m + np.arange(free_cols.size)
    nnz = pat.nnz
    keep = ~pinned[pat.cols]
    r_idx = np.concatenate([np.arange(nnz), np.flatnonzero(keep)])
    c_idx = np.concatenate([pat.rows, col_index[pat.cols[keep]]])
    a_mat = sp.csr_matrix((np.ones(r_idx.size), (r_idx, c_idx)), shape=(nnz, m + free_cols.size))
    normal = (a_mat.T @ a_mat).tocsc()
    sol = np.atleast_1d(spsolve(normal, a_mat.T @ y))
    log_d1 = sol[:m]
    log_d2 = np.zeros(n)
    log_d2[free_cols] = sol[m:]

    alpha = inst.gamma / (1.0 + inst.gamma)
    k = inst.kernel
    col_mass = np.bincount(pat.cols, weights=np.exp(log_d1)[pat.rows] * k.values, minlength=n)
    g = log_d2 - alpha * (np.log(inst.v_tilde) - np.log(col_mass))
    row_labels = labels[:m]
    for c in range(ncomp):
        shift = np.mean(g[col_labels == c]) / (1.0 - alpha)
        log_d1[row_labels == c] += shift
        log_d2[col_labels == c] -= shift
    return np.exp(log_d1), np.exp(log_d2), int(ncomp)


def check_kkt(inst: ProblemInstance, plan, v_star=None, allow_disconnected: bool = True) -> OptimalityReport:
    """Fixed-point residuals of ``plan`` as a minimizer of the relaxed problem.

    ``plan`` may be a :class:`TransportPlan` or a dense array. When ``v_star``
    is omitted the plan's column sums are used.
    """
    pat = inst.pattern
    mat = _as_matrix(plan, pat)
    entries = mat[pat.rows, pat.cols]
    rows = mat.sum(axis=1)
    cols = mat.sum(axis=0)
    v_star = cols if v_star is None else np.asarray(v_star, dtype=float)
    su = float(np.sum(inst.u_tilde))
    positivity = check_positivity(mat, pat)
    base = dict(
        row_residual=float(np.max(np.abs(rows - inst.u_tilde) / inst.u_tilde)),
        balance_residual=abs(float(np.sum(v_star)) - su) / su,
        min_support_entry=float(np.min(entries)),
        positivity_ok=positivity,
        v_star_positive=bool(np.all(v_star > 0)),
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        base["column_residual"] = float(np.max(np.abs(cols - v_star) / v_star))
    if not np.all(entries > 0):
        return OptimalityReport(fixed_point_residual=math.inf, **base)

    ncomp, _ = _support_components(pat)
    if ncomp > 1 and not allow_disconnected:
        raise DisconnectedSupport(f"support graph has {ncomp} components")
    d1, d2, ncomp = recover_scalings(inst, entries)
    k = inst.kernel.values
    alpha = inst.gamma / (1.0 + inst.gamma)
    fitted = d1[pat.rows] * k * d2[pat.cols]
    k_d2 = np.bincount(pat.rows, weights=k * d2[pat.cols], minlength=pat.m)
    d1_k = np.bincount(pat.cols, weights=d1[pat.rows] * k, minlength=pat.n)
    res_t = np.max(np.abs(fitted / entries - 1.0))
    res_d1 = np.max(np.abs(d1 * k_d2 / inst.u_tilde - 1.0))
    res_d2 = np.max(np.abs(d2 / (inst.v_tilde / d1_k) ** alpha - 1.0))
    residual = float(max(res_t, res_d1, res_d2))
    return OptimalityReport(fixed_point_residual=residual, components=ncomp, **base)


def check_limit_properties(report: SolveReport, inst: ProblemInstance, tol: float = 1e-9) -> OptimalityReport:
    """Residuals of a finished solve plus a list of violated limit properties.

    Checked: row sums equal ``u_tilde``, ``sum(v_star) == sum(u_tilde)``,
    ``v_star > 0``, and strict positivity off the pattern.
    """
    rep = check_kkt(inst, report.plan, report.v_star)
    problems = []
    if not report.converged:
        problems.append(f"termination={report.termination.value}")
    if not rep.row_residual < tol:
        problems.append(f"row_residual={rep.row_residual:.3e}")
    if not rep.balance_residual < tol:
        problems.append(f"balance_residual={rep.balance_residual:.3e}")
    if not rep.v_star_positive:
        problems.append("v_star not strictly positive")
    if not rep.positivity_ok:
        problems.append("plan not strictly positive off the pattern")
    return replace(rep, violations=tuple(problems))


class _ReducedObjective:
    """Objective over the free entries left after eliminating one entry per row."""

    def __init__(self, inst: ProblemInstance):
        pat = inst.pattern
        self.inst = inst
        self.u = inst.u_tilde.tolist()
        self.k = inst.kernel.matrix
        self.allowed = [np.flatnonzero(pat.allowed[i]).tolist() for i in range(pat.m)]
        # free coordinate -> (row, column); the last allowed column of a row is dependent
        self.coords = [(i, j) for i, cols in enumerate(self.allowed) for j in cols[:-1]]
        self.row_of = [i for i, _ in self.coords]

    @property
    def dim(self) -> int:
        return len(self.coords)

    def plan(self, x) -> np.ndarray:
        t = np.zeros(self.k.shape)
        for (i, j), val in zip(self.coords, x):
            t[i, j] = val
        for i, cols in enumerate(self.allowed):
            t[i, cols[-1]] = self.u[i] - t[i, cols[:-1]].sum()
        return t

    def upper(self, x, idx: int) -> float:
        """Largest feasible value of coordinate ``idx`` given the others."""
        row = self.row_of[idx]
        others = sum(x[q] for q in range(self.dim) if q != idx and self.row_of[q] == row)
        return max(self.u[row] - others, 0.0)

    def __call__(self, x) -> float:
        t = self.plan(x)
        allowed = self.inst.pattern.allowed
        if np.any(t[allowed] < 0):
            return math.inf
        return float(
            np.sum(kl_terms(t[allowed], self.k[allowed]))
            + self.inst.gamma * np.sum(kl_terms(t.sum(axis=0), self.inst.v_tilde))
        )

    def grid_values(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized objective over an array of points of shape ``(N, dim)``."""
        inst = self.inst
        out = np.full(pts.shape[0], np.inf)
        entries: dict[tuple[int, int], np.ndarray] = {}
        q = 0
        feasible = np.ones(pts.shape[0], dtype=bool)
        for i, cols in enumerate(self.allowed):
            rest = np.full(pts.shape[0], self.u[i])
            for j in cols[:-1]:
                entries[i, j] = pts[:, q]
                rest = rest - pts[:, q]
                q += 1
            entries[i, cols[-1]] = rest
            feasible &= rest >= 0
        keep = np.flatnonzero(feasible)
        f = np.zeros(keep.size)
        col_sums = np.zeros((self.k.shape[1], keep.size))
        for (i, j), vals in entries.items():
            vals = vals[keep]
            f += kl_terms(vals, self.k[i, j])
            col_sums[j] += vals
        for j in range(self.k.shape[1]):
            f += inst.gamma * kl_terms(col_sums[j], inst.v_tilde[j])
        out[keep] = f
        return out


def _golden(f, lo: float, hi: float, width: float) -> tuple[float, float]:
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > width:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def oracle_minimize(
    inst: ProblemInstance, grid: int = ORACLE_GRID, width: float = 1e-12, max_sweeps: int = 2000
) -> TransportPlan:
    """Minimize the relaxed objective by exhaustive grid search plus
    coordinate-wise golden-section refinement.

    Only for tiny problems: ``m * n <= 12`` and at most four free entries
    once each row's sum is fixed. Independent of the scaling algorithms.

    Raises
    ------
    TooLarge
        If the size limits are exceeded.
    """
    validate_instance(inst).raise_for_errors()
    pat = inst.pattern
    if pat.m * pat.n > 12 or pat.nnz - pat.m > 4:
        raise TooLarge(f"oracle handles m*n <= 12 with <= 4 free entries, got {pat.m}x{pat.n}, nnz={pat.nnz}")
    f = _ReducedObjective(inst)
    d = f.dim
    if d == 0:
        return TransportPlan.from_matrix(f.plan([]), pat)

    axes = [np.linspace(0.0, f.u[i], grid + 2)[1:-1] for i in f.row_of]
    spacing = [ax[1] - ax[0] if grid > 1 else f.u[i] for ax, i in zip(axes, f.row_of)]
    best_x, best_f = None, math.inf
    # one slab per value of the first coordinate keeps memory at grid**(d-1) points
    rest = np.stack([g.ravel() for g in np.meshgrid(*axes[1:], indexing="ij")], axis=1) if d > 1 else np.empty((1, 0))
    for x0 in axes[0]:
        block = np.column_stack([np.full(rest.shape[0], x0), rest])
        vals = f.grid_values(block)
        idx = int(np.argmin(vals))
        if vals[idx] < best_f:
            best_f, best_x = float(vals[idx]), block[idx].copy()

    x = list(best_x)
    fx = best_f
    radius = [2.0 * s for s in spacing]
    for _ in range(max_sweeps):
        f_start = fx
        for q in range(d):
            ub = f.upper(x, q)

            def line(val, q=q):
                y = list(x)
                y[q] = val
                return f(y)

            r = radius[q]
            while True:
                lo, hi = max(0.0, x[q] - r), min(ub, x[q] + r)
                xq, fq = _golden(line, lo, hi, width)
                at_edge = (xq - lo < 10 * width and lo > 0.0) or (hi - xq < 10 * width and hi < ub)
                if not at_edge or r > ub:
                    break
                r *= 8.0
            if fq < fx:
                radius[q] = max(8.0 * abs(xq - x[q]), 1e-9)
                x[q], fx = xq, fq
            else:
                radius[q] = max(radius[q] / 2.0, 1e-9)
        if f_start - fx <= 1e-15 * max(1.0, abs(fx)):
            break
    t = f.plan(x)
    t[~pat.allowed] = 0.0
    return TransportPlan.from_matrix(np.maximum(t, 0.0), pat)
