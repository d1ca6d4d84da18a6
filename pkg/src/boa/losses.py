"""Loss functions on a bounded prediction domain, their sub-gradients and
the Lipschitz / strong-convexity constants the rate conditions are built from.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainViolation

DOMAIN_SLACK = 1e-12


class LossKind(str, Enum):
    SQUARE = "square"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class LossConstants:
    """``C_b`` Lipschitz constant, ``C_ell`` strong-convexity modulus, ``D`` diameter."""

    C_b: float
    C_ell: float
    D: float

    def __post_init__(self):
        if not (self.C_b > 0 and self.C_ell >= 0 and self.D > 0):
            raise ValueError(f"invalid loss constants {self}")
        if self.C_ell > 0 and self.C_ell * self.D > 2 * self.C_b * (1 + 1e-12):
            raise ValueError("strong convexity and Lipschitz constants are incompatible")

    @property
    def range(self) -> float:
        """Bound C_b * D on centered and linearized excess losses."""
        return self.C_b * self.D


def _interval(bounds, name):
    lo, hi = (float(b) for b in bounds)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"{name} must be a finite interval with lo < hi, got {bounds!r}")
    return lo, hi


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind
    prediction_domain: tuple[float, float] = (0.0, 1.0)
    outcome_domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "prediction_domain", _interval(self.prediction_domain, "prediction_domain"))
        object.__setattr__(self, "outcome_domain", _interval(self.outcome_domain, "outcome_domain"))

    @property
    def diameter(self) -> float:
        lo, hi = self.prediction_domain
        return hi - lo

    @property
    def strongly_convex(self) -> bool:
        return self.kind is LossKind.SQUARE


def _check(spec: LossSpec, y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    lo, hi = spec.prediction_domain
    if np.any(p < lo - DOMAIN_SLACK) or np.any(p > hi + DOMAIN_SLACK):
        raise DomainViolation(f"prediction outside [{lo}, {hi}]")
    ylo, yhi = spec.outcome_domain
    if np.any(y < ylo - DOMAIN_SLACK) or np.any(y > yhi + DOMAIN_SLACK):
        raise DomainViolation(f"outcome outside [{ylo}, {yhi}]")
    return y, p


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def eval_loss(spec: LossSpec, y, p):
    y, p = _check(spec, y, p)
    if spec.kind is LossKind.SQUARE:
        return _scalar((y - p) ** 2)
    return _scalar(np.abs(y - p))


def subgradient(spec: LossSpec, y, p):
    """Derivative in the prediction; the absolute loss picks 0 at its kink."""
    y, p = _check(spec, y, p)
    if spec.kind is LossKind.SQUARE:
        return _scalar(2.0 * (p - y))
    return _scalar(np.sign(p - y))


def loss_constants(spec: LossSpec) -> LossConstants:
    lo, hi = spec.prediction_domain
    ylo, yhi = spec.outcome_domain
    if spec.kind is LossKind.SQUARE:
        # sup of |2(p - y)| over the two boxes
        return LossConstants(C_b=2.0 * max(abs(yhi - lo), abs(ylo - hi)), C_ell=2.0, D=hi - lo)
    return LossConstants(C_b=1.0, C_ell=0.0, D=hi - lo)


def optimal_mixture_eta(constants: LossConstants) -> float:
    """Largest rate allowed by 48 C_b^2 (1 + 3 C_b D / 100) eta <= C_ell."""
    if constants.C_ell <= 0:
        raise ValueError("the mixture-mode rate needs a strongly convex loss")
    C_b, D = constants.C_b, constants.D
    return constants.C_ell / (48.0 * C_b**2 * (1.0 + 3.0 * C_b * D / 100.0))
