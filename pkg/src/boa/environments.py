"""Seeded synthetic data sources.

Each environment owns one PCG64 generator seeded through
``numpy.random.SeedSequence(seed)`` and draws exactly one variate per
round: a standard normal for the Gaussian and drifting kinds, a uniform on
[0, 1) for the uniform and alternating kinds.  Round ``t`` therefore reads
the ``t``-th variate of the stream, and ``draws(n)`` in bulk returns the same
values as ``n`` successive calls to ``step``.

Experts are constants for the iid kinds.  Adversarial kinds also accept the
rules ``"last"`` (previous outcome) and ``"flip"`` (previous outcome
reflected through the middle of the outcome domain).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from .errors import NotAnalytic
from .losses import LossKind, LossSpec

CLIP_TOLERANCE = 1e-6
RULES = ("last", "flip")


class EnvKind(str, Enum):
    IID_GAUSSIAN_SHIFT = "iid-gaussian-shift"
    IID_UNIFORM = "iid-uniform"
    ADVERSARIAL_ALTERNATING = "adversarial-alternating"
    ADVERSARIAL_DRIFTING_MEAN = "adversarial-drifting-mean"

    @property
    def iid(self) -> bool:
        return self in (EnvKind.IID_GAUSSIAN_SHIFT, EnvKind.IID_UNIFORM)

    @property
    def gaussian_draws(self) -> bool:
        return self in (EnvKind.IID_GAUSSIAN_SHIFT, EnvKind.ADVERSARIAL_DRIFTING_MEAN)


@dataclass(frozen=True)
class EnvironmentConfig:
    """Outcome law and expert rules.

    ``theta``/``sigma`` parameterize the Gaussian kinds, ``low``/``high`` the
    uniform kind (default: the outcome domain), ``amplitude``/``period`` the
    drifting mean theta + amplitude * sin(2 pi t / period) + sigma * z.
    """

    kind: EnvKind
    experts: tuple
    outcome_domain: tuple[float, float] = (0.0, 1.0)
    theta: float = 0.5
    sigma: float = 0.1
    low: float | None = None
    high: float | None = None
    amplitude: float = 0.25
    period: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        experts = tuple(e if isinstance(e, str) else float(e) for e in self.experts)
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "outcome_domain", tuple(float(b) for b in self.outcome_domain))
        if not experts:
            raise ValueError("need at least one expert")
        for e in experts:
            if isinstance(e, str) and (self.kind.iid or e not in RULES):
                raise ValueError(f"expert rule {e!r} not allowed for {self.kind.value}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.kind is EnvKind.IID_UNIFORM:
            lo, hi = self.uniform_bounds
            if not lo < hi:
                raise ValueError("uniform outcomes need low < high")

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    @property
    def uniform_bounds(self) -> tuple[float, float]:
        ylo, yhi = self.outcome_domain
        return (ylo if self.low is None else float(self.low), yhi if self.high is None else float(self.high))

    @property
    def constant_experts(self) -> bool:
        return all(not isinstance(e, str) for e in self.experts)

    def expert_constants(self) -> np.ndarray:
        if not self.constant_experts:
            raise NotAnalytic("experts are not all constant")
        return np.array(self.experts, dtype=float)

    def outcomes(self, t, z):
        """Outcome of round ``t`` (1-based) from the round's variate ``z``.

        Returns ``(y, clipped)``; ``z`` may be an array over streams.
        """
        z = np.asarray(z, dtype=float)
        ylo, yhi = self.outcome_domain
        kind = self.kind
        if kind is EnvKind.IID_GAUSSIAN_SHIFT:
            raw = self.theta + self.sigma * z
        elif kind is EnvKind.IID_UNIFORM:
            lo, hi = self.uniform_bounds
            raw = lo + (hi - lo) * z
        elif kind is EnvKind.ADVERSARIAL_ALTERNATING:
            raw = np.full(z.shape, ylo + (yhi - ylo) * (t % 2))
        else:
            raw = self.theta + self.amplitude * np.sin(2 * np.pi * t / self.period) + self.sigma * z
        y = np.clip(raw, ylo, yhi)
        return y, y != raw

    def predictions(self, prev_y):
        """Expert predictions for the coming round given the previous outcome."""
        prev_y = np.asarray(prev_y, dtype=float)
        ylo, yhi = self.outcome_domain
        cols = []
        for e in self.experts:
            if e == "last":
                cols.append(prev_y)
            elif e == "flip":
                cols.append(ylo + yhi - prev_y)
            else:
                cols.append(np.full(prev_y.shape, e))
        return np.stack(cols, axis=-1)

    def initial_outcome(self) -> float:
        ylo, yhi = self.outcome_domain
        return 0.5 * (ylo + yhi)

    def clip_probability(self) -> float:
        """Per-round probability that the outcome is clipped (iid kinds)."""
        ylo, yhi = self.outcome_domain
        if self.kind is EnvKind.IID_GAUSSIAN_SHIFT:
            if self.sigma == 0:
                return 0.0 if ylo <= self.theta <= yhi else 1.0
            return float(norm.cdf((ylo - self.theta) / self.sigma) + norm.sf((yhi - self.theta) / self.sigma))
        if self.kind is EnvKind.IID_UNIFORM:
            lo, hi = self.uniform_bounds
            inside = max(0.0, min(hi, yhi) - max(lo, ylo))
            return 1.0 - inside / (hi - lo)
        raise NotAnalytic(f"{self.kind.value} has no stationary outcome law")

    def outcome_moments(self) -> tuple[float, float]:
        """Mean and variance of the unclipped outcome (iid kinds)."""
        if self.kind is EnvKind.IID_GAUSSIAN_SHIFT:
            return self.theta, self.sigma**2
        if self.kind is EnvKind.IID_UNIFORM:
            lo, hi = self.uniform_bounds
            return 0.5 * (lo + hi), (hi - lo) ** 2 / 12.0
        raise NotAnalytic(f"{self.kind.value} has no stationary outcome law")


@dataclass(frozen=True)
class RoundSample:
    x: int
    expert_preds: np.ndarray
    y: float


class Environment:
    """One seeded stream of rounds."""

    def __init__(self, config: EnvironmentConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.rng = make_generator(seed)
        self.t = 0
        self.prev_y = config.initial_outcome()
        self.clipped = 0

    def _draw(self, size=None):
        if self.config.kind.gaussian_draws:
            return self.rng.standard_normal(size)
        return self.rng.random(size)

    def step(self) -> RoundSample:
        preds = self.config.predictions(self.prev_y)
        self.t += 1
        y, clipped = self.config.outcomes(self.t, self._draw())
        self.clipped += int(clipped)
        self.prev_y = float(y)
        return RoundSample(x=self.t, expert_preds=preds, y=float(y))

    def draws(self, n: int) -> np.ndarray:
        """The next ``n`` round variates in one call (advances the stream)."""
        return self._draw(n)


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def analytic_risk(env, expert_index: int, spec: LossSpec) -> float:
    """Risk E[loss(Y, c_j)] of a constant expert under the square loss."""
    config = env.config if isinstance(env, Environment) else env
    c = config.expert_constants()[expert_index]
    return float(risk_of_constant(config, c, spec))


def risk_of_constant(config: EnvironmentConfig, p, spec: LossSpec):
    """Square-loss risk of the constant prediction ``p``: Var(Y) + (E Y - p)^2."""
    if not config.kind.iid:
        raise NotAnalytic(f"{config.kind.value} outcomes are not iid")
    if spec.kind is not LossKind.SQUARE:
        raise NotAnalytic("analytic risks are only available for the square loss")
    if config.clip_probability() > CLIP_TOLERANCE:
        raise NotAnalytic("outcome clipping is not negligible for these parameters")
    mean, var = config.outcome_moments()
    return var + (mean - np.asarray(p, dtype=float)) ** 2


def expert_risks(config: EnvironmentConfig, spec: LossSpec) -> np.ndarray:
    return np.asarray(risk_of_constant(config, config.expert_constants(), spec), dtype=float)


def risk_gap(config: EnvironmentConfig, spec: LossSpec) -> tuple[int, float]:
    """Index of the best expert and its risk gap to the runner-up."""
    risks = expert_risks(config, spec)
    best = int(np.argmin(risks))
    if risks.size == 1:
        return best, float("inf")
    rest = np.delete(risks, best)
    return best, float(rest.min() - risks[best])


def draw_noise(config: EnvironmentConfig, seeds, n: int) -> np.ndarray:
    """Stack the first ``n`` variates of each seeded stream, shape (len(seeds), n)."""
    return np.stack([Environment(config, s).draws(n) for s in seeds])
