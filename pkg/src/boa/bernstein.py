"""Monte-Carlo check of the empirical Bernstein inequality for martingales.

For a martingale with increments bounded below by -1/2,
E[exp(M_n - [M]_n)] <= 1, where [M]_n is the realized quadratic variation.
The increment families below are built to approach that lower edge; the
last one replays the excess losses of a live aggregation run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import uniform
from .engine import ExcessLossMode, Variant, boa_step_fixed, excess_losses, init_state
from .environments import EnvironmentConfig, EnvKind, make_generator, risk_of_constant
from .errors import HypothesisViolation
from .losses import LossKind, LossSpec

LOWER_EDGE = -0.5
MIN_REPS = 100


@dataclass(frozen=True)
class ScaledRademacher:
    """Increments +-a with equal probability."""

    a: float = 0.5

    def validate(self):
        if not 0 <= self.a <= 0.5:
            raise HypothesisViolation(f"Rademacher scale {self.a} would step below -1/2")

    def sample(self, rng, shape):
        signs = rng.integers(0, 2, size=shape) * 2 - 1
        return self.a * signs.astype(float)


@dataclass(frozen=True)
class CenteredBernoulli:
    """Increments scale * (B - p) with B ~ Bernoulli(p); the low value is -scale * p."""

    p: float = 0.9
    scale: float = 0.5

    def validate(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.scale < 0 or self.scale * self.p > 0.5 + 1e-15:
            raise HypothesisViolation(f"scale {self.scale} with p={self.p} steps below -1/2")

    def support(self):
        """The two-point law as (values, probabilities)."""
        return (np.array([self.scale * (1 - self.p), -self.scale * self.p]),
                np.array([self.p, 1 - self.p]))

    def sample(self, rng, shape):
        b = rng.random(shape) < self.p
        return self.scale * (b.astype(float) - self.p)


@dataclass(frozen=True)
class BoundedUniform:
    """Increments uniform on [-a, a]."""

    a: float = 0.5

    def validate(self):
        if not 0 <= self.a <= 0.5:
            raise HypothesisViolation(f"uniform half-width {self.a} would step below -1/2")

    def sample(self, rng, shape):
        return self.a * (2.0 * rng.random(shape) - 1.0)


@dataclass(frozen=True)
class BoaExcessLoss:
    """eta * (E_{t-1}[ell_{j,t}] - ell_{j,t}) from a fixed-rate run in centered mode.

    Outcomes are iid uniform on ``outcome_domain`` and the experts are
    constants, so the conditional means come from the analytic risks.
    """

    experts: tuple = (0.2, 0.5, 0.9)
    eta: float = 0.1
    expert: int = 0
    outcome_domain: tuple = (0.0, 1.0)

    @property
    def env(self) -> EnvironmentConfig:
        return EnvironmentConfig(EnvKind.IID_UNIFORM, self.experts, self.outcome_domain)

    @property
    def spec(self) -> LossSpec:
        lo, hi = min(self.experts), max(self.experts)
        if lo == hi:
            hi = lo + 1.0
        return LossSpec(LossKind.SQUARE, (lo, hi), self.outcome_domain)

    def max_loss(self) -> float:
        ylo, yhi = self.outcome_domain
        c = np.asarray(self.experts, dtype=float)
        return float(np.max(np.maximum((c - ylo) ** 2, (c - yhi) ** 2)))

    def validate(self):
        if not 0 <= self.expert < len(self.experts):
            raise ValueError("expert index out of range")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        # both the centered loss and its conditional mean lie in [-max, max]
        if 2.0 * self.eta * self.max_loss() > 0.5:
            raise HypothesisViolation(f"eta={self.eta} lets increments reach below -1/2")

    def sample(self, rng, shape):
        reps, n = shape
        env, spec = self.env, self.spec
        risks = np.asarray(risk_of_constant(env, np.array(self.experts), spec))
        preds = np.asarray(self.experts, dtype=float)
        state = init_state(Variant.BOA_FIXED, uniform(len(self.experts)), batch_shape=(reps,))
        out = np.empty((reps, n))
        for t in range(n):
            w = state.weights
            y, _ = env.outcomes(t + 1, rng.random(reps))
            ell = excess_losses(ExcessLossMode.CENTERED, w, preds, y, spec)
            cond = risks - (w * risks).sum(axis=-1, keepdims=True)
            out[:, t] = self.eta * (cond[:, self.expert] - ell[:, self.expert])
            state = boa_step_fixed(state, ell, self.eta)
        return out


KINDS = (ScaledRademacher, CenteredBernoulli, BoundedUniform, BoaExcessLoss)


@dataclass(frozen=True)
class MartingalePath:
    """Increments dM_1..dM_n (rows are independent paths when 2-D); dM_0 = 0."""

    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        object.__setattr__(self, "increments", inc)
        if inc.size and inc.min() < LOWER_EDGE:
            raise HypothesisViolation(f"increment {inc.min()} below -1/2")

    @property
    def n(self) -> int:
        return self.increments.shape[-1]

    @property
    def values(self) -> np.ndarray:
        """M_0..M_n."""
        pad = [(0, 0)] * (self.increments.ndim - 1) + [(1, 0)]
        return np.cumsum(np.pad(self.increments, pad), axis=-1)

    @property
    def quadratic_variation(self) -> np.ndarray:
        """[M]_0..[M]_n."""
        pad = [(0, 0)] * (self.increments.ndim - 1) + [(1, 0)]
        return np.cumsum(np.pad(self.increments**2, pad), axis=-1)


def simulate_martingale(kind, n: int, seed: int, reps: int | None = None) -> MartingalePath:
    """Draw one path (or ``reps`` paths stacked on axis 0) of length ``n``."""
    kind.validate()
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = make_generator(seed)
    r = 1 if reps is None else int(reps)
    inc = kind.sample(rng, (r, n))
    return MartingalePath(inc[0] if reps is None else inc)


def bernstein_statistic(path: MartingalePath):
    """exp(M_n - [M]_n), per path."""
    inc = path.increments
    out = np.exp(inc.sum(axis=-1) - (inc**2).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def estimate_expectation(kind, n: int, reps: int, seed: int) -> tuple[float, float]:
    """Sample mean and standard error of the statistic over ``reps`` paths."""
    if reps < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} replications")
    stats = np.asarray(bernstein_statistic(simulate_martingale(kind, n, seed, reps=reps)))
    return float(stats.mean()), float(stats.std(ddof=1) / np.sqrt(reps))


def two_point_expectation(values, probs, n: int = 1) -> float:
    """Exact E[exp(M_n - [M]_n)] for iid increments from a finite law.

    The statistic factorizes over rounds, so it is the n-th power of the
    one-step expectation.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    return float((probs * np.exp(values - values**2)).sum() ** n)


def cms_gap(x):
    """(1 + x) - exp(x - x^2), nonnegative for x >= -1/2."""
    x = np.asarray(x, dtype=float)
    return 1.0 + x - np.exp(x - x**2)

