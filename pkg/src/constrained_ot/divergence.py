"""Generalized Kullback-Leibler divergences and the relaxed transport objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InstanceError, MaskedMatrix, PatternMismatch, ProblemInstance

__all__ = [
    "DomainError",
    "ObjectiveValue",
    "kl_scalar",
    "kl_terms",
    "kl_vector",
    "kl_matrix",
    "objective",
    "chizat_objective",
    "regularization_identity_residual",
]


class DomainError(InstanceError):
    pass


@dataclass(frozen=True)
class ObjectiveValue:
    kl_plan: float
    kl_marginal: float
    total: float


def kl_scalar(t: float, t_ref: float) -> float:
    """``t log(t / t_ref) - t + t_ref``, and ``t_ref`` when ``t == 0``."""
    if not (t >= 0 and math.isfinite(t)):
        raise DomainError(f"t must be finite and nonnegative, got {t}")
    if not (t_ref > 0 and math.isfinite(t_ref)):
        raise DomainError(f"t_ref must be finite and positive, got {t_ref}")
    if t == 0:
        return float(t_ref)
    ratio = t / t_ref
    log_ratio = math.log(ratio) if ratio > 0 else math.log(t) - math.log(t_ref)  # ratio underflow
    return t * log_ratio - t + t_ref


def kl_terms(t: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Elementwise :func:`kl_scalar` over arrays, without domain checks."""
    t = np.asarray(t, dtype=float)
    ref = np.asarray(ref, dtype=float)
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = safe / ref
        log_ratio = np.where(ratio > 0, np.log(ratio), np.log(safe) - np.log(ref))  # ratio underflow
        body = safe * log_ratio - safe + ref
    return np.where(pos, body, ref)


def kl_vector(t, ref) -> float:
    t = np.asarray(t, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if t.shape != ref.shape:
        raise PatternMismatch(f"shape {t.shape} != {ref.shape}")
    if np.any(t < 0) or np.any(ref <= 0):
        raise DomainError("kl requires t >= 0 and ref > 0")
    # contiguous 1-D np.sum is pairwise, so the value does not depend on storage layout
    return float(np.sum(kl_terms(t, ref)))


def kl_matrix(t: MaskedMatrix, ref: MaskedMatrix) -> float:
    """KL divergence summed over the allowed entries only."""
    if t.pattern != ref.pattern:
        raise PatternMismatch("plans have different zero patterns")
    return kl_vector(t.values, ref.values)


def objective(inst: ProblemInstance, t: MaskedMatrix) -> ObjectiveValue:
    """``KL(T|K) + gamma * KL(column sums of T | v_tilde)``."""
    kl_plan = kl_matrix(t, inst.kernel)
    kl_marg = kl_vector(t.col_sums(), inst.v_tilde)
    return ObjectiveValue(kl_plan, kl_marg, kl_plan + inst.gamma * kl_marg)


def chizat_objective(inst: ProblemInstance, t: MaskedMatrix, gamma1: float, gamma2: float) -> float:
    """Objective with both marginals penalized (no hard row constraint)."""
    return (
        kl_matrix(t, inst.kernel)
        + gamma1 * kl_vector(t.row_sums(), inst.u_tilde)
        + gamma2 * kl_vector(t.col_sums(), inst.v_tilde)
    )


def regularization_identity_residual(c: float, t: float, t_tilde: float, gamma0: float) -> float:
    """Residual of rewriting ``c t + gamma0 kl(t|t~)`` as ``gamma0 kl(t|k) + gamma0 (t~ - k)``.

    With ``k = t~ exp(-c / gamma0)``, the two sides agree for every
    ``t >= 0``; the returned difference is pure rounding error.
    """
    if not gamma0 > 0:
        raise DomainError(f"gamma0 must be positive, got {gamma0}")
    if not math.isfinite(c):
        raise DomainError(f"c must be finite, got {c}")
    lhs = c * t + gamma0 * kl_scalar(t, t_tilde)  # validates t and t_tilde
    # kl(t|k) is evaluated from log k so that an underflowing k (small gamma0) stays exact
    log_k = math.log(t_tilde) - c / gamma0
    k = math.exp(log_k)
    kl_tk = k if t == 0 else t * (math.log(t) - log_k) - t + k
    rhs = gamma0 * kl_tk + gamma0 * t_tilde - gamma0 * k
    return lhs - rhs
