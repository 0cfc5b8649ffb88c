"""Closed-form KL projections and the alternating-projection driver.

A point is a pair ``(T, v)`` with ``T`` positive off the zero pattern and
``v`` positive; its divergence from a reference ``(S, w)`` is
``KL(T|S) + gamma * KL(v|w)``. The two constraint sets are "row sums of T
equal u_tilde" and "column sums of T equal v". Projecting onto each has a
closed form, and alternating them from ``(K, v_tilde)`` generates exactly
the relaxed-column scaling iterates.

Everything here works on dense ``m x n`` arrays with explicit zeros on the
pattern, independently of :mod:`constrained_ot.solvers`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProblemInstance, TransportPlan, ZeroPattern, validate_instance
from .divergence import kl_terms

__all__ = [
    "AugmentedPoint",
    "project_rows",
    "project_columns",
    "alternate",
    "bregman_objective",
    "initial_gradient",
]


@dataclass(frozen=True, eq=False)
class AugmentedPoint:
    t: np.ndarray
    v: np.ndarray
    pattern: ZeroPattern

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        v = np.array(self.v, dtype=float)
        if t.shape != self.pattern.shape or v.shape != (self.pattern.n,):
            raise ValueError("point dimensions do not match the pattern")
        if np.any(t[~self.pattern.allowed] != 0):
            raise ValueError("point is nonzero on a forbidden pair")
        if not (np.all(t[self.pattern.allowed] > 0) and np.all(v > 0)):
            raise ValueError("point must be strictly positive off the pattern")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    def plan(self) -> TransportPlan:
        return TransportPlan.from_matrix(self.t, self.pattern)


def project_rows(point: AugmentedPoint, u_tilde) -> AugmentedPoint:
    """Scale each row of ``T`` to sum to ``u_tilde``; ``v`` is untouched."""
    u = np.asarray(u_tilde, dtype=float)
    c1 = u / point.t.sum(axis=1)
    return AugmentedPoint(c1[:, None] * point.t, point.v, point.pattern)


def project_columns(point: AugmentedPoint, gamma: float) -> AugmentedPoint:
    """Move ``T``'s column sums and ``v`` to a common value.

    Column ``j`` of ``T`` is scaled by ``c = (w_j / s_j)**(gamma/(1+gamma))``
    where ``s_j`` is its sum and ``w_j`` the current ``v_j``; ``v_j`` becomes
    ``c**(-1/gamma) * w_j``, which equals the new column sum.
    """
    w = point.v
    s = point.t.sum(axis=0)
    c2 = (w / s) ** (gamma / (1.0 + gamma))
    return AugmentedPoint(point.t * c2[None, :], c2 ** (-1.0 / gamma) * w, point.pattern)


def alternate(inst: ProblemInstance, iterations: int) -> list[AugmentedPoint]:
    """Points ``x(0), x(1), ..., x(iterations)`` where ``x(0) = (K, v_tilde)`` and
    each step is a row projection followed by a column projection."""
    validate_instance(inst).raise_for_errors()
    x = AugmentedPoint(inst.kernel.matrix, inst.v_tilde, inst.pattern)
    out = [x]
    for _ in range(iterations):
        x = project_columns(project_rows(x, inst.u_tilde), inst.gamma)
        out.append(x)
    return out


def bregman_objective(inst: ProblemInstance, t: np.ndarray, v: np.ndarray) -> float:
    """``KL(T|K) + gamma KL(v|v_tilde)`` with ``T`` dense; forbidden entries ignored."""
    allowed = inst.pattern.allowed
    k = inst.kernel.matrix
    return float(
        np.sum(kl_terms(np.asarray(t)[allowed], k[allowed]))
        + inst.gamma * np.sum(kl_terms(v, inst.v_tilde))
    )


def initial_gradient(inst: ProblemInstance, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of the divergence at ``(K, v_tilde)``.

    Coordinates are the allowed entries of ``T`` (row-major) followed by
    ``gamma * v``, i.e. the scaled coordinates in which the objective is a
    plain KL divergence.
    """
    k = inst.kernel.matrix
    v0 = np.array(inst.v_tilde)
    pat = inst.pattern
    grad = []
    for i, j in zip(pat.rows.tolist(), pat.cols.tolist()):
        tp, tm = k.copy(), k.copy()
        tp[i, j] += step
        tm[i, j] -= step
        grad.append((bregman_objective(inst, tp, v0) - bregman_objective(inst, tm, v0)) / (2 * step))
    for j in range(pat.n):
        vp, vm = v0.copy(), v0.copy()
        vp[j] += step / inst.gamma
        vm[j] -= step / inst.gamma
        grad.append((bregman_objective(inst, k, vp) - bregman_objective(inst, k, vm)) / (2 * step))
    return np.array(grad)
