"""Command-line harness.

Exit codes: 0 success, 1 configuration error, 2 learning-rate violation
under ``--strict``, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import bernstein
from .config import load_config
from .diagnostics import best_convex_oracle
from .errors import BOAError, ConfigError, InsufficientData
from .experiment import fit_rate, run_single, run_sweep, simulate, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_STRICT, EXIT_IO = 0, 1, 2, 3


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boa", description="Second-order online aggregation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=_u64, help="override the config's base seed")
        sp.add_argument("--strict", action="store_true", help="exit 2 if the rate condition was violated")

    sp = sub.add_parser("run", help="single run with a per-round trace")
    common(sp, "trace CSV (a .summary.csv sibling is written too)")
    sp.add_argument("--timing", action="store_true", help="fill the wallclock_ms column")

    sp = sub.add_parser("sweep", help="replications over a list of horizons")
    common(sp, "summary CSV")
    sp.add_argument("--threads", type=int, default=None, help="worker processes, 0 = one per CPU")
    sp.add_argument("--timing", action="store_true", help="fill the wallclock_ms column")

    sp = sub.add_parser("fit-rate", help="log-log slope of a summary column's quantile")
    sp.add_argument("summary", help="summary CSV from sweep")
    sp.add_argument("--column", default="batch_excess_risk")
    sp.add_argument("--q", type=float, default=0.95)
    sp.add_argument("--per-round", action="store_true", help="divide the column by n first")

    sp = sub.add_parser("bernstein", help="Monte-Carlo estimate of E[exp(M_n - [M]_n)]")
    sp.add_argument("--kind", choices=["rademacher", "bernoulli", "uniform", "boa"], action="append")
    sp.add_argument("--n", type=int, action="append", help="path length (repeatable)")
    sp.add_argument("--reps", type=int, default=100_000)
    sp.add_argument("--seed", type=_u64, default=0)
    sp.add_argument("--out", help="CSV output (default: stdout)")

    sp = sub.add_parser("oracle", help="best convex combination in hindsight for one run")
    common(sp, "CSV with the oracle weights and value")
    return p


KIND_FACTORIES = {
    "rademacher": lambda: bernstein.ScaledRademacher(0.5),
    "bernoulli": lambda: bernstein.CenteredBernoulli(0.9, 1 / 1.8),
    "uniform": lambda: bernstein.BoundedUniform(0.5),
    "boa": lambda: bernstein.BoaExcessLoss(),
}


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _strict_exit(args, cfg, flags) -> int:
    if args.strict and cfg.checks_eta and flags > 0:
        print(f"strict: learning-rate condition violated in {flags} round(s)", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.output or f"{cfg.name}.csv"
    res = run_single(cfg, out, timing=args.timing)
    row = res.rows[0]
    print(f"{cfg.name}: n={row['n']} regret_best={row['regret_best']:.6g} -> {out}")
    return _strict_exit(args, cfg, row["eta_flag_count"])


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.output or f"{cfg.name}.summary.csv"
    rows = run_sweep(cfg, out, threads=args.threads, timing=args.timing)
    print(f"{cfg.name}: {len(rows)} rows -> {out}")
    return _strict_exit(args, cfg, sum(r["eta_flag_count"] for r in rows))


def _cmd_fit(args) -> int:
    fit = fit_rate(args.summary, args.column, args.q, per_round=args.per_round)
    print(f"slope={fit.slope:.6g} intercept={fit.intercept:.6g} residual={fit.residual:.3g}")
    return EXIT_OK


def _cmd_bernstein(args) -> int:
    kinds = args.kind or list(KIND_FACTORIES)
    ns = args.n or [1, 10, 100]
    rows = []
    for name in kinds:
        for n in ns:
            mean, se = bernstein.estimate_expectation(KIND_FACTORIES[name](), n, args.reps, args.seed)
            rows.append([name, n, args.reps, mean, se, mean <= 1.0 + 3.0 * se])
    header = ["kind", "n", "reps", "mean", "se", "within_bound"]
    if args.out:
        write_csv(args.out, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join("%.17g" % v if isinstance(v, float) else str(int(v) if isinstance(v, bool) else v)
                           for v in r))
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_STRICT


def _cmd_oracle(args) -> int:
    cfg = _load(args)
    if len(cfg.horizons) != 1:
        raise ConfigError("oracle takes a single n")
    res = simulate(replace(cfg, oracle=False), [0], keep_trace=True)
    cols = 4 + 5 * cfg.M
    trace = np.asarray(res.trace, dtype=float).reshape(-1, cols)
    ys = trace[:, 1]
    preds = trace[:, 4::5][:, :cfg.M]
    result = best_convex_oracle(preds, ys, cfg.loss, seed=0)
    header = ["value", "converged", "regret_convex"] + [f"weight_{j}" for j in range(1, cfg.M + 1)]
    row = [result.value, result.converged, float(res.ledger.cum_loss_agg[0]) - result.value,
           *result.weights.tolist()]
    if args.out:
        write_csv(args.out, header, [row])
    print(f"oracle value={result.value:.6g} weights={np.array2string(result.weights, precision=5)}"
          + ("" if result.converged else " (restarts disagree)"))
    return _strict_exit(args, cfg, int(res.ledger.eta_flags[0]))


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "fit-rate": _cmd_fit,
            "bernstein": _cmd_bernstein, "oracle": _cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InsufficientData, KeyError, BOAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
