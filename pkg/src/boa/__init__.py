"""Second-order exponential weights for online aggregation of experts.

The package provides the fixed, multi-rate and adaptive recursions
(`boa.engine`), their learning-rate schedules (`boa.rates`), seeded
synthetic environments, bound evaluators, a Monte-Carlo check of the
empirical Bernstein inequality and a command-line experiment harness.
"""
from .core import kl_divergence, mixture_predict, uniform
from .engine import (
    AggregatorState, ExcessLossMode, Variant, boa_step_adaptive, boa_step_fixed, boa_step_multi,
    closed_form_weights_fixed, ewa_step, excess_losses, init_state,
)
from .losses import LossKind, LossSpec, eval_loss, loss_constants, optimal_mixture_eta, subgradient
from .rates import RateSchedule, ScheduleKind

__version__ = "0.1.0"

__all__ = [
    "AggregatorState", "ExcessLossMode", "LossKind", "LossSpec", "RateSchedule", "ScheduleKind",
    "Variant", "boa_step_adaptive", "boa_step_fixed", "boa_step_multi", "closed_form_weights_fixed",
    "eval_loss", "ewa_step", "excess_losses", "init_state", "kl_divergence", "loss_constants",
    "mixture_predict", "optimal_mixture_eta", "subgradient", "uniform",
]
