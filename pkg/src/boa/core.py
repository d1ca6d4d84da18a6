"""Simplex arithmetic shared by the aggregation engine and the diagnostics.

Weight vectors are plain ``numpy`` arrays whose last axis indexes the experts.
Leading axes, when present, index independent streams processed in lockstep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AbsoluteContinuityViolation, AllZeroMass, DimensionMismatch

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class StreamConfig:
    num_experts: int
    horizon: int

    def __post_init__(self):
        if self.num_experts < 1 or self.horizon < 1:
            raise ValueError("num_experts and horizon must both be >= 1")


def is_probability_vector(w, tol=SIMPLEX_TOL) -> bool:
    w = np.asarray(w, dtype=float)
    if w.ndim == 0 or w.shape[-1] < 1:
        return False
    return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=-1) - 1.0) <= tol))


def as_probability_vector(w, tol=SIMPLEX_TOL) -> np.ndarray:
    """Validate ``w`` as a point of the simplex and return it as a float array."""
    w = np.asarray(w, dtype=float)
    if not is_probability_vector(w, tol):
        raise ValueError(f"not a probability vector: {w!r}")
    return w


def uniform(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("need at least one expert")
    return np.full(m, 1.0 / m)


def normalize_log_weights(lw) -> np.ndarray:
    """Map unnormalized log-weights to the simplex via max subtraction."""
    lw = np.asarray(lw, dtype=float)
    if lw.ndim == 0 or lw.shape[-1] < 1:
        raise DimensionMismatch("log-weight vector must have at least one entry")
    top = lw.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise AllZeroMass("every log-weight is -inf")
    w = np.exp(lw - top)
    return w / w.sum(axis=-1, keepdims=True)


def log_normalize(lw) -> np.ndarray:
    """Subtract log-sum-exp so that ``exp`` of the result lies on the simplex."""
    lw = np.asarray(lw, dtype=float)
    top = lw.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(top)):
        raise AllZeroMass("every log-weight is -inf")
    return lw - (top + np.log(np.exp(lw - top).sum(axis=-1, keepdims=True)))


def mixture_predict(w, preds) -> np.ndarray | float:
    """Weighted average of expert predictions, sum_j w_j * preds_j."""
    w = np.asarray(w, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if w.shape[-1:] != preds.shape[-1:]:
        raise DimensionMismatch(f"{w.shape[-1:]} weights vs {preds.shape[-1:]} predictions")
    out = (w * preds).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_divergence(q, p) -> float | np.ndarray:
    """Relative entropy K(q, p) with the convention 0 log(0/.) = 0."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise DimensionMismatch(f"{q.shape} vs {p.shape}")
    support = q > 0
    if np.any(support & (p <= 0)):
        raise AbsoluteContinuityViolation("q puts mass where p has none")
    terms = np.zeros_like(q)
    terms[support] = q[support] * np.log(q[support] / p[support])
    # rounding can leave a tiny negative total when q == p
    out = np.maximum(terms.sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out
