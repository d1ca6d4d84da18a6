"""Weight recursions of the Bernstein Online Aggregation family.

A round always runs in the same order: the aggregate prediction is formed
with the previous weights, the outcome is revealed, excess losses are
computed and centered under the previous weights, the adaptive variant then
refreshes its rates, and finally the new weights are produced.

Every step function takes an :class:`AggregatorState` and returns a new one;
the input state is never modified.  Arrays carry the experts on their last
axis, so a state built with ``batch_shape=(R,)`` advances ``R`` independent
streams at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import as_probability_vector, log_normalize, mixture_predict, normalize_log_weights
from .errors import DimensionMismatch, EtaConditionViolated
from .losses import LossSpec, eval_loss, loss_constants, subgradient
from .rates import RateSchedule, ScheduleKind, update_range_estimate

ETA_LIMIT = 0.5


class Variant(str, Enum):
    BOA_FIXED = "boa-fixed"
    BOA_MULTI = "boa-multi"
    BOA_ADAPTIVE = "boa-adaptive"
    EWA = "ewa"


class ExcessLossMode(str, Enum):
    CENTERED = "centered"
    LINEARIZED = "linearized"
    MIXTURE = "mixture"


@dataclass
class AggregatorState:
    variant: Variant
    prior: np.ndarray
    log_weights: np.ndarray
    cum_losses: np.ndarray
    eta: np.ndarray
    sum_sq: np.ndarray
    max_abs: np.ndarray
    range_est: np.ndarray | None = None
    range_c: int | None = None
    t: int = 0
    eta_flags: np.ndarray = field(default=None)
    doublings: np.ndarray = field(default=None)
    zero_rate_flags: np.ndarray = field(default=None)
    last_violation: np.ndarray = field(default=None)
    last_doubling: np.ndarray = field(default=None)

    @property
    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    @property
    def num_experts(self) -> int:
        return self.prior.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.log_weights.shape[:-1]


def init_state(variant, prior, batch_shape=(), schedule: RateSchedule | None = None,
               range_c: int | None = None) -> AggregatorState:
    """Fresh state at t = 0 with weights equal to the prior.

    ``schedule`` fixes eta_{j,0} for the adaptive variant; ``range_c`` (or an
    unknown-range schedule) initializes the dyadic range estimates.
    """
    variant = Variant(variant)
    prior = as_probability_vector(prior)
    if prior.ndim != 1:
        raise DimensionMismatch("the prior is a single vector shared by all streams")
    if np.any(prior <= 0):
        raise ValueError("prior masses must be strictly positive")
    shape = tuple(batch_shape) + prior.shape
    if schedule is not None and schedule.kind is ScheduleKind.UNKNOWN_RANGE:
        range_c = schedule.c
    range_est = None
    if range_c is not None:
        range_est = np.full(shape, float(2.0 ** (-range_c + 1)))
    if variant is Variant.BOA_ADAPTIVE:
        if schedule is None:
            raise ValueError("the adaptive variant needs a rate schedule")
        eta = schedule.initial_rates(shape)
    else:
        eta = np.zeros(shape)
    bshape = tuple(batch_shape)
    return AggregatorState(
        variant=variant,
        prior=prior,
        log_weights=np.broadcast_to(np.log(prior), shape).copy(),
        cum_losses=np.zeros(shape),
        eta=eta,
        sum_sq=np.zeros(shape),
        max_abs=np.zeros(shape),
        range_est=range_est,
        range_c=range_c,
        t=0,
        eta_flags=np.zeros(bshape, dtype=np.int64),
        doublings=np.zeros(shape, dtype=np.int64),
        zero_rate_flags=np.zeros(bshape, dtype=np.int64),
        last_violation=np.zeros(shape, dtype=bool),
        last_doubling=np.zeros(shape, dtype=bool),
    )


def excess_losses(mode, w_prev, expert_preds, y, spec: LossSpec) -> np.ndarray:
    """Excess losses ell_{j,t}, centered under the pre-update weights ``w_prev``."""
    mode = ExcessLossMode(mode)
    w_prev = np.asarray(w_prev, dtype=float)
    preds = np.asarray(expert_preds, dtype=float)
    if w_prev.shape[-1] != preds.shape[-1]:
        raise DimensionMismatch(f"{w_prev.shape[-1]} weights vs {preds.shape[-1]} predictions")
    y = np.asarray(y, dtype=float)
    fhat = np.asarray(mixture_predict(w_prev, preds))
    out = np.zeros(np.broadcast_shapes(w_prev.shape, preds.shape))
    if mode is not ExcessLossMode.LINEARIZED:
        if mode is ExcessLossMode.MIXTURE and loss_constants(spec).C_ell <= 0:
            raise ValueError("mixture mode needs a strongly convex loss")
        raw = np.asarray(eval_loss(spec, y[..., None], preds))
        out = out + raw - (w_prev * raw).sum(axis=-1, keepdims=True)
    if mode is not ExcessLossMode.CENTERED:
        g = np.asarray(subgradient(spec, y, fhat))
        out = out + g[..., None] * (preds - fhat[..., None])
    return out


def _check_rates(state: AggregatorState, scaled: np.ndarray, strict: bool):
    viol = scaled > ETA_LIMIT
    if strict and viol.any():
        idx = tuple(np.argwhere(viol)[0])
        stream = idx[:-1] if len(idx) > 1 else None
        if stream is not None and len(stream) == 1:
            stream = stream[0]
        raise EtaConditionViolated(int(idx[-1]), state.t + 1, float(scaled[idx]), stream)
    return viol, state.eta_flags + viol.any(axis=-1)


def _expect_variant(state, variant):
    if state.variant is not variant:
        raise ValueError(f"state is {state.variant.value}, expected {variant.value}")


def _second_order_step(state, ell, rates, strict):
    ell = np.asarray(ell, dtype=float)
    if ell.shape[-1] != state.num_experts:
        raise DimensionMismatch(f"{ell.shape[-1]} excess losses for {state.num_experts} experts")
    viol, flags = _check_rates(state, rates * np.abs(ell), strict)
    penalty = ell * (1.0 + rates * ell)
    abs_ell = np.abs(ell)
    new_range, doubled = state.range_est, state.last_doubling
    if state.range_est is not None:
        new_range = np.asarray(update_range_estimate(state.range_est, abs_ell, state.range_c))
        doubled = new_range > state.range_est
    return replace(
        state,
        log_weights=log_normalize(state.log_weights - rates * penalty),
        cum_losses=state.cum_losses + penalty,
        eta=np.broadcast_to(rates, ell.shape).astype(float),
        sum_sq=state.sum_sq + ell**2,
        max_abs=np.maximum(state.max_abs, abs_ell),
        range_est=new_range,
        t=state.t + 1,
        eta_flags=flags,
        doublings=state.doublings + doubled,
        last_violation=viol,
        last_doubling=doubled,
    )


def boa_step_fixed(state: AggregatorState, ell, eta: float, strict: bool = True) -> AggregatorState:
    """pi_{j,t} proportional to exp(-eta ell_j (1 + eta ell_j)) pi_{j,t-1}.

    Raises :class:`EtaConditionViolated` when ``eta * |ell_j| > 1/2`` unless
    ``strict`` is False, in which case the round is only counted.
    """
    _expect_variant(state, Variant.BOA_FIXED)
    if not eta > 0:
        raise ValueError("eta must be positive")
    return _second_order_step(state, ell, np.float64(eta), strict)


def boa_step_multi(state: AggregatorState, ell, etas, strict: bool = True) -> AggregatorState:
    """Per-expert rates eta_j in the fixed-rate recursion."""
    _expect_variant(state, Variant.BOA_MULTI)
    etas = np.asarray(etas, dtype=float)
    if etas.shape[-1] != state.num_experts:
        raise DimensionMismatch(f"{etas.shape[-1]} rates for {state.num_experts} experts")
    if np.any(etas <= 0):
        raise ValueError("rates must be positive")
    return _second_order_step(state, ell, etas, strict)


def boa_step_adaptive(state: AggregatorState, ell, schedule: RateSchedule) -> AggregatorState:
    """One round of the adaptive procedure.

    L_{j,t} is accumulated with the previous rate eta_{j,t-1}; the rates are
    then refreshed from statistics through round t and the weights rebuilt
    from the prior as eta_{j,t} exp(-eta_{j,t} L_{j,t}) pi_{j,0}.  Rounds where
    eta_{j,t-1} |ell_{j,t}| > 1/2 are counted, never raised.  Rows whose rates
    are all zero fall back to the prior and are counted in ``zero_rate_flags``.
    """
    _expect_variant(state, Variant.BOA_ADAPTIVE)
    ell = np.asarray(ell, dtype=float)
    if ell.shape[-1] != state.num_experts:
        raise DimensionMismatch(f"{ell.shape[-1]} excess losses for {state.num_experts} experts")
    viol, flags = _check_rates(state, state.eta * np.abs(ell), strict=False)
    L = state.cum_losses + ell * (1.0 + state.eta * ell)
    sum_sq = state.sum_sq + ell**2
    abs_ell = np.abs(ell)

    new_range, doubled = state.range_est, np.zeros(ell.shape, dtype=bool)
    if schedule.kind is ScheduleKind.UNKNOWN_RANGE:
        new_range = np.asarray(update_range_estimate(state.range_est, abs_ell, schedule.c))
        doubled = new_range > state.range_est

    informative = state.prior < 1.0
    if informative.all():
        eta = schedule.rates(state.prior, sum_sq, new_range)
    else:
        # singleton simplex: nothing to learn, keep the rate at zero
        eta = np.zeros(ell.shape)
    eta = np.broadcast_to(eta, ell.shape).astype(float)

    dead = ~(eta > 0).any(axis=-1)
    with np.errstate(divide="ignore"):
        lw = np.log(eta) - eta * L + np.log(state.prior)
    if dead.any():
        lw = np.where(dead[..., None], np.log(state.prior), lw)
    return replace(
        state,
        log_weights=log_normalize(lw),
        cum_losses=L,
        eta=eta,
        sum_sq=sum_sq,
        max_abs=np.maximum(state.max_abs, abs_ell),
        range_est=new_range,
        t=state.t + 1,
        eta_flags=flags,
        doublings=state.doublings + doubled,
        zero_rate_flags=state.zero_rate_flags + dead,
        last_violation=viol,
        last_doubling=doubled,
    )


def ewa_step(state: AggregatorState, raw_losses, eta: float) -> AggregatorState:
    """Plain exponential weights on raw losses, no second-order term."""
    _expect_variant(state, Variant.EWA)
    raw = np.asarray(raw_losses, dtype=float)
    if raw.shape[-1] != state.num_experts:
        raise DimensionMismatch(f"{raw.shape[-1]} losses for {state.num_experts} experts")
    return replace(
        state,
        log_weights=log_normalize(state.log_weights - eta * raw),
        cum_losses=state.cum_losses + raw,
        eta=np.full(raw.shape, float(eta)),
        t=state.t + 1,
        last_violation=np.zeros(raw.shape, dtype=bool),
    )


def closed_form_weights_fixed(ell_history, eta: float, prior) -> np.ndarray:
    """Non-recursive weights exp(-eta sum_s ell_s (1 + eta ell_s)) pi_0, normalized.

    ``ell_history`` stacks the rounds on axis 0.
    """
    hist = np.asarray(ell_history, dtype=float)
    if hist.ndim < 1 or hist.shape[0] == 0:
        raise ValueError("history must contain at least one round")
    prior = as_probability_vector(prior)
    total = (hist * (1.0 + eta * hist)).sum(axis=0)
    return normalize_log_weights(np.log(prior) - eta * total)
