"""Batched round loop, trace/summary CSV emission and rate fitting.

All replications of a configuration advance in lockstep as rows of one
batch.  Every operation acts row by row, so a replication produces the same
numbers whether it runs alone or inside a batch.  Sweeps run each
replication once up to the largest horizon and snapshot the ledger at every
requested horizon.
"""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (
    RiskLedger, best_convex_oracle, bound_adaptive, bound_fixed_ms, bound_multi,
    excess_risk_quantile, realized_ranges, regret_vs_best_expert, risk_bound_adaptive,
    risk_bound_stochastic,
)
from .engine import (
    Variant, boa_step_adaptive, boa_step_fixed, boa_step_multi, ewa_step, excess_losses, init_state,
)
from .environments import draw_noise, expert_risks, risk_of_constant
from .errors import ConfigError, InsufficientData, NotAnalytic
from .losses import eval_loss
from .rates import RangeInfo, ScheduleKind

SUMMARY_COLUMNS = (
    "seed", "n", "variant", "mode", "regret_best", "regret_convex", "batch_excess_risk",
    "bound_value", "bound_violated", "eta_flag_count", "range_doublings", "wallclock_ms",
)
MIN_HORIZONS = 4
MIN_REPS_PER_HORIZON = 30


def trace_columns(M: int) -> list[str]:
    cols = ["t", "y", "fhat", "loss_agg"]
    for j in range(1, M + 1):
        cols += [f"pred_{j}", f"loss_{j}", f"ell_{j}", f"eta_{j}", f"weight_{j}"]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows):
    """RFC-4180 CSV with '\\n' line endings and 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _analytic_risks(cfg: ExperimentConfig):
    try:
        return expert_risks(cfg.environment, cfg.loss)
    except NotAnalytic:
        return None


def _step(cfg, state, ell, raw):
    v = cfg.variant
    if v is Variant.BOA_FIXED:
        return boa_step_fixed(state, ell, cfg.eta, strict=False)
    if v is Variant.BOA_MULTI:
        return boa_step_multi(state, ell, cfg.eta, strict=False)
    if v is Variant.BOA_ADAPTIVE:
        return boa_step_adaptive(state, ell, cfg.schedule)
    return ewa_step(state, raw, cfg.eta)


def _nan(shape):
    return np.full(shape, np.nan)


def _bound(cfg: ExperimentConfig, ledger: RiskLedger, n: int):
    """Evaluated bound (lhs, rhs) matching the variant and the ``bound`` setting."""
    shape = ledger.batch_shape
    v, kind = cfg.variant, cfg.schedule.kind if cfg.schedule is not None else None
    if cfg.bound == "none" or v is Variant.EWA:
        return _nan(shape), _nan(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.bound == "risk":
            if not ledger.has_risks:
                return _nan(shape), _nan(shape)
            if v is Variant.BOA_FIXED or kind is ScheduleKind.FIXED:
                b = risk_bound_stochastic(ledger, float(np.max(cfg.eta)), None, cfg.x, allow_flagged=True)
            elif kind is ScheduleKind.UNKNOWN_RANGE:
                b = risk_bound_adaptive(ledger, None, realized_ranges(ledger, cfg.schedule.c), n, cfg.x)
            else:
                return _nan(shape), _nan(shape)
        elif v is Variant.BOA_FIXED or kind is ScheduleKind.FIXED:
            b = bound_fixed_ms(ledger, float(cfg.eta), allow_flagged=True)
        elif v is Variant.BOA_MULTI:
            b = bound_multi(ledger, cfg.eta, allow_flagged=True)
        elif kind is ScheduleKind.KNOWN_RANGE:
            E = np.asarray(cfg.schedule.E, dtype=float)
            b = bound_adaptive(ledger, None, RangeInfo(E=E, cap=float(E.max())), n, True, allow_flagged=True)
        else:
            b = bound_adaptive(ledger, None, realized_ranges(ledger, cfg.schedule.c), n, False)
    return np.broadcast_to(b.lhs, shape), np.broadcast_to(b.rhs, shape)


@dataclass
class RunResult:
    """Per-horizon summary rows plus the final ledger of the batch."""

    rows: list
    ledger: RiskLedger
    trace: list | None = None


def simulate(cfg: ExperimentConfig, reps, keep_trace: bool = False, timing: bool = False) -> RunResult:
    """Run replications ``reps`` (indices) of ``cfg`` as one batch."""
    reps = list(reps)
    seeds = [cfg.seed + r for r in reps]
    R, M, spec, env = len(seeds), cfg.M, cfg.loss, cfg.environment
    horizons = set(cfg.horizons)
    nmax = cfg.n
    start = time.perf_counter()

    noise = draw_noise(env, seeds, nmax)
    risks = _analytic_risks(cfg)
    state = init_state(cfg.variant, cfg.prior, batch_shape=(R,), schedule=cfg.schedule)
    ledger = RiskLedger(cfg.prior, cfg.mode, (R,), keep_history=False, loss_spec=spec)
    prev_y = np.full(R, env.initial_outcome())
    ys = np.empty((R, nmax)) if cfg.oracle else None
    preds_hist = np.empty((R, nmax, M)) if cfg.oracle else None
    trace = [] if keep_trace else None
    rows = []

    for t in range(1, nmax + 1):
        preds = env.predictions(prev_y)
        w = state.weights
        y, _ = env.outcomes(t, noise[:, t - 1])
        raw = np.asarray(eval_loss(spec, y[:, None], preds))
        if cfg.variant is Variant.EWA:
            ell = raw - (w * raw).sum(axis=-1, keepdims=True)
        else:
            ell = excess_losses(cfg.mode, w, preds, y, spec)
        eta_prev = state.eta if cfg.variant is Variant.BOA_ADAPTIVE else None
        state = _step(cfg, state, ell, raw)
        eta_new = state.eta
        w_new = state.weights
        risk_agg = None
        if risks is not None:
            risk_agg = risk_of_constant(env, (w * preds).sum(axis=-1), spec)
        ledger.record(w, preds, y, raw, ell, eta_prev if eta_prev is not None else eta_new, eta_new,
                      w_new, violation=state.last_violation, doubled=state.last_doubling,
                      risk_experts=risks, risk_agg=risk_agg)
        if cfg.oracle:
            ys[:, t - 1] = y
            preds_hist[:, t - 1] = preds
        if keep_trace:
            fhat = (w * preds).sum(axis=-1)
            row = [t, y[0], fhat[0], float(eval_loss(spec, y[0], fhat[0]))]
            for j in range(M):
                row += [preds[0, j], raw[0, j], ell[0, j], eta_new[0, j], w_new[0, j]]
            trace.append(row)
        prev_y = y
        if t in horizons:
            rows.extend(_snapshot(cfg, ledger, state, t, reps, seeds, risks, ys, preds_hist,
                                  (time.perf_counter() - start) * 1000.0 / R if timing else None))
    return RunResult(rows, ledger, trace)


def _snapshot(cfg, ledger, state, n, reps, seeds, risks, ys, preds_hist, wall):
    regret = np.atleast_1d(regret_vs_best_expert(ledger))
    convex = _nan(len(seeds))
    if cfg.oracle:
        oracle = best_convex_oracle(preds_hist[:, :n], ys[:, :n], cfg.loss)
        convex = ledger.cum_loss_agg - oracle.value
    excess = _nan(len(seeds))
    if risks is not None:
        fbar = (ledger.batch_weights() * cfg.environment.expert_constants()).sum(axis=-1)
        excess = risk_of_constant(cfg.environment, fbar, cfg.loss) - risks.min()
    lhs, rhs = _bound(cfg, ledger, n)
    out = []
    for i, r in enumerate(reps):
        out.append(dict(
            rep=r, seed=seeds[i], n=n, variant=cfg.variant.value, mode=cfg.mode.value,
            regret_best=float(regret[i]), regret_convex=float(convex[i]),
            batch_excess_risk=float(excess[i]), bound_value=float(rhs[i]),
            bound_violated=bool(lhs[i] > rhs[i]), eta_flag_count=int(ledger.eta_flags[i]),
            range_doublings=int(state.doublings[i].sum()), wallclock_ms=wall,
        ))
    return out


def resolve_threads(threads: int | None) -> int:
    """``--threads`` with ``BOA_THREADS`` as fallback; 0 means one per CPU."""
    if threads is None:
        env = os.environ.get("BOA_THREADS")
        threads = int(env) if env else 1
    if threads < 0:
        raise ValueError("threads must be nonnegative")
    return threads or (os.cpu_count() or 1)


def _simulate_chunk(args):
    cfg, reps, timing = args
    return simulate(cfg, reps, timing=timing).rows


def run_sweep(cfg: ExperimentConfig, out_path=None, threads: int | None = None, timing: bool = False):
    """One summary row per (n, replication), sorted by n then replication."""
    workers = min(resolve_threads(threads), cfg.replications)
    reps = list(range(cfg.replications))
    if workers <= 1:
        rows = simulate(cfg, reps, timing=timing).rows
    else:
        chunks = [c.tolist() for c in np.array_split(np.array(reps), workers) if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [row for part in pool.map(_simulate_chunk, [(cfg, c, timing) for c in chunks])
                    for row in part]
    rows.sort(key=lambda r: (r["n"], r["rep"]))
    if out_path is not None:
        write_csv(out_path, SUMMARY_COLUMNS, [[r[c] for c in SUMMARY_COLUMNS] for r in rows])
    return rows


def summary_path(trace_path) -> str:
    stem, _ = os.path.splitext(str(trace_path))
    return stem + ".summary.csv"


def run_single(cfg: ExperimentConfig, out_path=None, timing: bool = False):
    """Replication 0 at the configured seed; writes the trace and its summary row."""
    if len(cfg.horizons) != 1:
        raise ConfigError("run takes a single n; use sweep for a list of horizons")
    res = simulate(cfg, [0], keep_trace=True, timing=timing)
    if out_path is not None:
        write_csv(out_path, trace_columns(cfg.M), res.trace)
        write_csv(summary_path(out_path), SUMMARY_COLUMNS, [[res.rows[0][c] for c in SUMMARY_COLUMNS]])
    return res


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (log n, log quantile)."""

    slope: float
    intercept: float
    residual: float
    horizons: tuple = ()
    quantiles: tuple = ()


def fit_power_law(horizons, values) -> RateFit:
    n = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float)
    if n.size < MIN_HORIZONS:
        raise InsufficientData(f"need at least {MIN_HORIZONS} horizons, got {n.size}")
    if np.any(v <= 0):
        raise ValueError("quantiles must be positive to fit on the log scale")
    X, Y = np.log(n), np.log(v)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))),
                   tuple(n.astype(int).tolist()), tuple(v.tolist()))


def fit_rate(csv_path, column: str, q: float = 0.95, per_round: bool = False) -> RateFit:
    """Fit the per-horizon q-quantile of ``column`` against n on log-log axes.

    ``per_round`` divides each value by its horizon first.
    """
    groups: dict[int, list[float]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise KeyError(f"column {column!r} not in {csv_path}")
        for rec in reader:
            n = int(rec["n"])
            val = float(rec[column]) if rec[column] != "" else math.nan
            groups.setdefault(n, []).append(val / n if per_round else val)
    if len(groups) < MIN_HORIZONS:
        raise InsufficientData(f"need at least {MIN_HORIZONS} horizons, got {len(groups)}")
    short = [n for n, vals in groups.items() if len(vals) < MIN_REPS_PER_HORIZON]
    if short:
        raise InsufficientData(f"horizons {sorted(short)} have fewer than {MIN_REPS_PER_HORIZON} rows")
    ns = sorted(groups)
    return fit_power_law(ns, [excess_risk_quantile(groups[n], q) for n in ns])


def quantile_curve(rows, column: str, q: float = 0.95, per_round: bool = False):
    """(horizons, quantiles) straight from in-memory sweep rows."""
    groups: dict[int, list[float]] = {}
    for r in rows:
        groups.setdefault(r["n"], []).append(r[column] / r["n"] if per_round else r[column])
    ns = sorted(groups)
    return ns, [excess_risk_quantile(groups[n], q) for n in ns]
