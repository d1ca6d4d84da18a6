"""Experiment configuration: JSON in, validated :class:`ExperimentConfig` out.

Structural checks come from the bundled JSON schema, which rejects unknown
keys.  Errors are reported with the line of the offending key whenever it
can be located in the source text.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from importlib import resources

import jsonschema
import numpy as np

from .core import SIMPLEX_TOL, uniform
from .engine import ExcessLossMode, Variant
from .environments import EnvironmentConfig, EnvKind
from .errors import ConfigError
from .losses import LossKind, LossSpec, loss_constants, optimal_mixture_eta
from .rates import DEFAULT_C, RateSchedule, ScheduleKind

DEFAULT_X = math.log(20.0)


def load_schema() -> dict:
    return json.loads(resources.files("boa").joinpath("config_schema.json").read_text("utf-8"))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    variant: Variant
    mode: ExcessLossMode
    loss: LossSpec
    M: int
    horizons: tuple
    replications: int
    seed: int
    eta: float | np.ndarray | None
    schedule: RateSchedule | None
    ranges: np.ndarray | None
    prior: np.ndarray
    environment: EnvironmentConfig
    x: float = DEFAULT_X
    bound: str = "regret"
    oracle: bool = False
    output: str | None = None

    @property
    def n(self) -> int:
        return max(self.horizons)

    @property
    def checks_eta(self) -> bool:
        """Whether the run is expected to keep eta |ell| <= 1/2 throughout."""
        if self.variant in (Variant.BOA_FIXED, Variant.BOA_MULTI):
            return True
        return (self.variant is Variant.BOA_ADAPTIVE
                and self.schedule.kind is not ScheduleKind.UNKNOWN_RANGE)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def _key_line(text: str, path) -> int | None:
    """Line of the last key in ``path``, searching each key after the previous one."""
    pos, line = 0, None
    for key in path:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            return line
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def _schema_error(text, err: jsonschema.ValidationError) -> ConfigError:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        if extra:
            where = ".".join(str(p) for p in path)
            prefix = f"{where}: " if where else ""
            return ConfigError(f"{prefix}unknown key {extra[0]!r}",
                               _key_line(text, path + [extra[0]]) or 1)
    where = ".".join(str(p) for p in path) or "<root>"
    return ConfigError(f"{where}: {err.message}", _key_line(text, path) or 1)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), e.message))
    if errors:
        raise _schema_error(text, errors[0])
    return _build(raw, text)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


def _fail(text, msg, *path):
    raise ConfigError(msg, _key_line(text, list(path)) or 1)


def _build(raw: dict, text: str) -> ExperimentConfig:
    variant = Variant(raw["variant"])
    mode = ExcessLossMode(raw.get("mode", "centered"))
    M = int(raw["M"])
    env_raw = dict(raw["environment"])
    experts = env_raw.pop("experts")
    if len(experts) != M:
        _fail(text, f"M = {M} but the environment lists {len(experts)} experts", "M")
    try:
        env = EnvironmentConfig(kind=EnvKind(env_raw.pop("kind")), experts=tuple(experts),
                                outcome_domain=tuple(raw.get("outcome_domain", (0.0, 1.0))), **env_raw)
    except ValueError as exc:
        _fail(text, f"environment: {exc}", "environment")

    try:
        spec = LossSpec(LossKind(raw.get("loss", "square")),
                        tuple(raw.get("prediction_domain", (0.0, 1.0))),
                        tuple(raw.get("outcome_domain", (0.0, 1.0))))
    except ValueError as exc:
        _fail(text, str(exc), "prediction_domain")
    if mode is ExcessLossMode.MIXTURE and not spec.strongly_convex:
        _fail(text, "mixture mode requires the square loss", "mode")
    lo, hi = spec.prediction_domain
    for e in experts:
        if not isinstance(e, str) and not lo <= e <= hi:
            _fail(text, f"expert constant {e} lies outside the prediction domain [{lo}, {hi}]", "experts")
        if isinstance(e, str) and (spec.outcome_domain[0] < lo or spec.outcome_domain[1] > hi):
            _fail(text, f"rule {e!r} predicts outcomes, so the prediction domain must cover the outcome domain",
                  "experts")

    prior_raw = raw.get("prior", "uniform")
    if prior_raw == "uniform":
        prior = uniform(M)
    else:
        prior = np.asarray(prior_raw, dtype=float)
        if prior.size != M:
            _fail(text, f"prior has {prior.size} entries for {M} experts", "prior")
        if abs(prior.sum() - 1.0) > SIMPLEX_TOL:
            _fail(text, f"prior sums to {prior.sum():.17g}, not 1", "prior")

    eta_raw = raw.get("eta")
    rates_raw = raw.get("rates")
    schedule, ranges, eta = None, None, None
    if rates_raw is not None and "E" in rates_raw:
        ranges = np.broadcast_to(np.asarray(rates_raw["E"], dtype=float), (M,)).copy() \
            if np.ndim(rates_raw["E"]) == 0 or len(rates_raw["E"]) == M else None
        if ranges is None:
            _fail(text, f"E must be a number or a list of {M} ranges", "rates", "E")

    if variant is Variant.BOA_FIXED:
        if eta_raw is None or eta_raw == "auto":
            if mode is not ExcessLossMode.MIXTURE:
                _fail(text, "boa-fixed needs an explicit eta outside mixture mode", "variant")
            eta = optimal_mixture_eta(loss_constants(spec))
        elif isinstance(eta_raw, list):
            _fail(text, "boa-fixed takes a single eta", "eta")
        else:
            eta = float(eta_raw)
    elif variant is Variant.EWA:
        if not isinstance(eta_raw, (int, float)) or isinstance(eta_raw, bool):
            _fail(text, "ewa needs a numeric eta", "eta" if eta_raw is not None else "variant")
        eta = float(eta_raw)
    elif variant is Variant.BOA_MULTI:
        if eta_raw is None or eta_raw == "auto":
            _fail(text, "boa-multi needs per-expert rates", "variant")
        eta = np.broadcast_to(np.asarray(eta_raw, dtype=float), (M,)).copy() \
            if np.ndim(eta_raw) == 0 or len(eta_raw) == M else None
        if eta is None:
            _fail(text, f"eta must list {M} rates", "eta")
    else:
        if rates_raw is None:
            _fail(text, "boa-adaptive needs a rates block", "variant")
        kind = ScheduleKind(rates_raw["kind"])
        if kind is ScheduleKind.FIXED:
            if not isinstance(eta_raw, (int, float)):
                _fail(text, "a fixed schedule needs a numeric eta", "rates")
            schedule = RateSchedule.fixed(float(eta_raw))
            eta = float(eta_raw)
        elif kind is ScheduleKind.KNOWN_RANGE:
            if ranges is None:
                _fail(text, "a known-range schedule needs E", "rates")
            schedule = RateSchedule.known_range(ranges)
        else:
            if "E" in rates_raw:
                _fail(text, "an unknown-range schedule takes c, not E", "rates", "E")
            schedule = RateSchedule.unknown_range(int(rates_raw.get("c", DEFAULT_C)))

    if ranges is not None and eta is not None:
        top = float(np.max(eta))
        limit = 1.0 / (2.0 * float(ranges.max()))
        if top > limit * (1.0 + 1e-12):
            _fail(text, f"eta = {top:.6g} exceeds 1/(2 max E) = {limit:.6g}", "eta")

    n_raw = raw["n"]
    horizons = tuple(sorted(int(v) for v in (n_raw if isinstance(n_raw, list) else [n_raw])))
    return ExperimentConfig(
        name=raw["name"], variant=variant, mode=mode, loss=spec, M=M, horizons=horizons,
        replications=int(raw.get("replications", 1)), seed=int(raw.get("seed", 0)),
        eta=eta, schedule=schedule, ranges=ranges, prior=prior, environment=env,
        x=float(raw.get("x", DEFAULT_X)), bound=raw.get("bound", "regret"),
        oracle=bool(raw.get("oracle", False)), output=raw.get("output"),
    )
