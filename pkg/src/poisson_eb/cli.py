"""Command-line entry point: simulate, estimate, bench, approx."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .bench import ExperimentConfig, emit_csv, emit_plots, run_experiment
from .errors import PoissonEBError
from .estimators import SampleCounts, erm_fit, erm_fit_clipped, mom_estimate, robbins_table, tabulate
from .mindist import DivergenceKind, make_grid, mindist_fit, naive_plugin, npmle_fit, plugin_bayes
from .oracle import bayes_estimate, sample_channel
from .priors import Bounded, SubExponential, prior_from_dict
from .smooth import chebyshev_approx, named_functional

ESTIMATE_CHOICES = ("mom", "robbins", "erm", "npmle-plugin", "naive-plugin",
                    "hellinger-plugin", "chisq-plugin", "oracle")


def _fmt(v) -> str:
    return repr(float(v))


def _load_json_arg(text: str) -> dict:
    """Inline JSON, or a path to a JSON file."""
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    return json.loads(text)


def _read_counts(path) -> SampleCounts:
    """Accept a column ``x`` (one row per draw) or columns ``x,count``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "x" not in reader.fieldnames:
            raise ValueError(f"{path!r} needs an 'x' column")
        rows = list(reader)
    xs = np.array([int(r["x"]) for r in rows], dtype=np.int64)
    if "count" in reader.fieldnames:
        weights = np.array([int(r["count"]) for r in rows], dtype=np.int64)
        if np.any(xs < 0) or np.any(weights < 0):
            raise ValueError("counts and x values must be nonnegative")
        freq = np.bincount(xs, weights=weights, minlength=1).astype(np.int64) if xs.size else np.zeros(1)
        return SampleCounts(freq)
    return tabulate(xs)


def _cmd_simulate(args) -> None:
    prior = prior_from_dict(_load_json_arg(args.prior))
    thetas, xs = sample_channel(prior, args.n, args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "x"])
        for t, x in zip(thetas, xs):
            w.writerow([_fmt(t), int(x)])


def _cmd_estimate(args) -> None:
    counts = _read_counts(args.prior_data)
    k, x_max = args.k, counts.x_max
    clip = None
    if args.clip is not None:
        a, b = (float(v) for v in args.clip.split(","))
        clip = (a, b)
    name = args.estimator
    fitted = None
    if name == "mom":
        values = mom_estimate(np.arange(x_max + 1), k)
    elif name == "robbins":
        values = robbins_table(counts, k)
    elif name == "erm":
        values = (erm_fit_clipped(counts, k, *clip) if clip else erm_fit(counts, k)).values
    elif name == "oracle":
        if args.prior is None:
            raise ValueError("the oracle estimator needs --prior")
        values = bayes_estimate(prior_from_dict(_load_json_arg(args.prior)), k, np.arange(x_max + 1))
    else:
        cls = Bounded(args.h) if args.h is not None else SubExponential(1.0)
        grid = make_grid(x_max, cls)
        if name in ("npmle-plugin", "naive-plugin"):
            fitted, _ = npmle_fit(counts, grid)
        elif name == "hellinger-plugin":
            fitted, _ = mindist_fit(counts, grid, DivergenceKind.SQUARED_HELLINGER)
        else:
            fitted, _ = mindist_fit(counts, grid, DivergenceKind.CHI_SQUARED)
        rule = naive_plugin if name == "naive-plugin" else plugin_bayes
        values = rule(fitted, k, x_max).values
    if clip is not None and name != "erm":
        values = np.clip(values, *clip)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "count", "estimate"])
        for x in range(x_max + 1):
            w.writerow([x, counts.N(x), _fmt(values[x])])
    if args.mixture_out is not None:
        if fitted is None:
            raise ValueError("--mixture-out only applies to the plugin estimators")
        fitted.to_csv(args.mixture_out)


def _cmd_bench(args) -> None:
    config = ExperimentConfig.from_json(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    records = run_experiment(config)
    emit_csv(records, os.path.join(args.out_dir, "records.csv"))
    if not args.no_plots:
        emit_plots(records, args.out_dir)


def _cmd_approx(args) -> None:
    approx = chebyshev_approx(named_functional(args.functional, args.h), args.h, args.degree)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["power", "coefficient"])
        for m, c in enumerate(approx.coefficients):
            w.writerow([m, _fmt(c)])
    print(f"sup_residual={approx.sup_residual!r}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-eb", description="Empirical Bayes for Poisson mixtures.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw (theta, x) pairs from a prior")
    p.add_argument("--prior", required=True, help="prior as inline JSON or a JSON file path")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="fit an estimator of E[theta^k | x] to observed counts")
    p.add_argument("--prior-data", required=True, help="CSV with an x column (and optionally count)")
    p.add_argument("--estimator", required=True, choices=ESTIMATE_CHOICES)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--clip", help="a,b bounds applied to the fitted values")
    p.add_argument("--h", type=float, help="support bound for the plugin grid")
    p.add_argument("--prior", help="true prior (oracle estimator only)")
    p.add_argument("--mixture-out", help="write the fitted mixing distribution here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("bench", help="run a Monte-Carlo regret experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("approx", help="polynomial coefficients of a named functional")
    p.add_argument("--functional", required=True, choices=("cube", "exp", "sqrt1p", "lipschitz-abs"))
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_approx)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (PoissonEBError, ValueError, OSError) as exc:
        print(f"poisson-eb: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
