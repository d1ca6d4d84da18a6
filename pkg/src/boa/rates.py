"""Learning-rate schedules for the adaptive aggregation procedure.

Three schedules are supported: a constant rate, per-expert rates tuned
with known effective ranges ``E_j``, and per-expert rates tuned with the
dyadic range estimate ``E_{j,t}`` when ranges are unknown.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import PriorNotInformative

DEFAULT_C = 30


class ScheduleKind(str, Enum):
    FIXED = "fixed"
    KNOWN_RANGE = "known-range"
    UNKNOWN_RANGE = "unknown-range"


def _variance_term(prior, sum_sq):
    prior = np.asarray(prior, dtype=float)
    sum_sq = np.asarray(sum_sq, dtype=float)
    if np.any(prior >= 1):
        raise PriorNotInformative("rates need prior masses strictly below 1")
    if np.any(prior <= 0):
        raise ValueError("prior masses must be positive")
    num = np.log(1.0 / prior)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # an empty sum of squares leaves only the range term
        return np.where(sum_sq > 0, np.sqrt(num / np.where(sum_sq > 0, sum_sq, 1.0)), np.inf)


def _maybe_scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def rate_known_range(prior_j, sum_sq_j, E_j):
    """min{1/(2 E_j), sqrt(log(1/prior_j) / sum_sq_j)}."""
    E_j = np.asarray(E_j, dtype=float)
    if np.any(E_j <= 0):
        raise ValueError("ranges must be positive")
    return _maybe_scalar(np.minimum(1.0 / (2.0 * E_j), _variance_term(prior_j, sum_sq_j)))


def rate_unknown_range(prior_j, sum_sq_j, E_jt):
    """min{1/E_jt, sqrt(log(1/prior_j) / sum_sq_j)}."""
    E_jt = np.asarray(E_jt, dtype=float)
    if np.any(E_jt <= 0):
        raise ValueError("range estimates must be positive")
    return _maybe_scalar(np.minimum(1.0 / E_jt, _variance_term(prior_j, sum_sq_j)))


def dyadic_exponent(x, c: int = DEFAULT_C):
    """Smallest integer k >= -c with x <= 2**k (exact on powers of two)."""
    x = np.asarray(x, dtype=float)
    mant, exp = np.frexp(np.where(x > 0, x, 1.0))
    # frexp gives x = mant * 2**exp with mant in [0.5, 1)
    k = np.where(mant == 0.5, exp - 1, exp)
    k = np.where(x > 0, k, -c)
    return np.maximum(k, -c).astype(np.int64)


def update_range_estimate(prev_E, abs_ell, c: int = DEFAULT_C):
    """Doubling estimate 2**(k+1) of the largest absolute excess loss seen.

    ``prev_E`` is the previous estimate (or None before the first round);
    since it equals 2**(k_prev + 1) it already encodes the running maximum.
    """
    if c < 1:
        raise ValueError("c must be a positive integer")
    fresh = np.exp2(dyadic_exponent(abs_ell, c) + 1.0)
    if prev_E is None:
        return _maybe_scalar(fresh)
    return _maybe_scalar(np.maximum(np.asarray(prev_E, dtype=float), fresh))


@dataclass(frozen=True)
class RangeInfo:
    """Per-expert effective ranges ``E`` and a global cap with 2**-c <= E_j <= cap."""

    E: np.ndarray
    cap: float
    c: int = DEFAULT_C

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        object.__setattr__(self, "E", E)
        if np.any(E <= 0):
            raise ValueError("ranges must be positive")
        if np.any(E > self.cap * (1 + 1e-12)):
            raise ValueError("a range exceeds the global cap")


@dataclass(frozen=True)
class RateSchedule:
    """Rule picking eta_{j,t} from the statistics accumulated through round t.

    ``eta`` is used by FIXED, ``E`` (scalar or per expert) by KNOWN_RANGE and
    ``c`` by UNKNOWN_RANGE.  Running statistics live in the aggregator state.
    """

    kind: ScheduleKind
    eta: float | None = None
    E: float | np.ndarray | None = None
    c: int = DEFAULT_C

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.kind is ScheduleKind.FIXED and not (self.eta is not None and self.eta > 0):
            raise ValueError("a fixed schedule needs eta > 0")
        if self.kind is ScheduleKind.KNOWN_RANGE:
            if self.E is None or np.any(np.asarray(self.E, dtype=float) <= 0):
                raise ValueError("a known-range schedule needs positive ranges E")
        if self.kind is ScheduleKind.UNKNOWN_RANGE and (int(self.c) != self.c or self.c < 1):
            raise ValueError("c must be a positive integer")

    @classmethod
    def fixed(cls, eta):
        return cls(ScheduleKind.FIXED, eta=eta)

    @classmethod
    def known_range(cls, E):
        return cls(ScheduleKind.KNOWN_RANGE, E=E)

    @classmethod
    def unknown_range(cls, c=DEFAULT_C):
        return cls(ScheduleKind.UNKNOWN_RANGE, c=c)

    def initial_rates(self, shape) -> np.ndarray:
        """eta_{j,0}: zero for the adaptive rules, the constant for FIXED."""
        if self.kind is ScheduleKind.FIXED:
            return np.full(shape, float(self.eta))
        return np.zeros(shape)

    def rates(self, prior, sum_sq, range_estimate=None) -> np.ndarray:
        prior = np.broadcast_to(np.asarray(prior, dtype=float), np.shape(sum_sq))
        if self.kind is ScheduleKind.FIXED:
            return np.full(np.shape(sum_sq), float(self.eta))
        if self.kind is ScheduleKind.KNOWN_RANGE:
            E = np.broadcast_to(np.asarray(self.E, dtype=float), np.shape(sum_sq))
            return np.asarray(rate_known_range(prior, sum_sq, E), dtype=float)
        return np.asarray(rate_unknown_range(prior, sum_sq, range_estimate), dtype=float)
