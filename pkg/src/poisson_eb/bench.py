"""Monte-Carlo regret benchmarking of the estimators against the oracle MMSE.

A cell is one (estimator, n) pair. Every replicate in a cell draws a fresh
sample from its own counter-based stream, so cells are independent of each
other and of the order in which they are listed or executed.
"""

from __future__ import annotations

import csv
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from .errors import InsufficientPoints, PoissonEBError
from .estimators import erm_fit, mom_estimate, robbins_table, tabulate
from .mindist import DivergenceKind, make_grid, mindist_fit, naive_plugin, npmle_fit, plugin_bayes
from .oracle import bayes_estimate, mmse, mmse_functional, posterior_expectation, sample_channel
from .priors import Bounded, Prior, PriorClassTag, SubExponential, prior_class, prior_from_dict
from .smooth import MAX_DEGREE, PolyApprox, chebyshev_approx, named_functional, smooth_table

MOMENT_ESTIMATORS = ("oracle", "mom", "robbins", "robbins-clipped", "erm", "erm-clipped",
                     "npmle-plugin", "naive-plugin", "hellinger-plugin", "chisq-plugin")
SMOOTH_ESTIMATORS = ("oracle", "robbins", "erm", "npmle-plugin")
REGRET_ESTIMATORS = ("conditional", "direct")
DEFAULT_N_GRID = tuple(int(round(10 ** (2 + 0.5 * i))) for i in range(7))
DEFAULT_REPLICATES = 50
CSV_HEADER = ("estimator", "n", "mean_regret", "se_regret", "rmse", "mmse", "replicates", "failed")


# -- functionals -------------------------------------------------------------

@dataclass(frozen=True)
class Functional:
    """Either the moment theta^k or a named smooth functional on [0, h]."""

    kind: str
    k: int = 0
    name: str = ""
    h: float = 0.0
    degree: int = 0

    def __post_init__(self):
        if self.kind == "moment":
            if self.k < 1:
                raise ValueError("moment order k must be >= 1")
        elif self.kind == "smooth":
            named_functional(self.name, self.h)
            if not self.h > 0:
                raise ValueError("smooth functional needs h > 0")
            if not 0 <= self.degree <= MAX_DEGREE:
                raise ValueError(f"degree must lie in 0..{MAX_DEGREE}")
        else:
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @classmethod
    def from_dict(cls, spec: dict) -> "Functional":
        kind = spec.get("kind", "moment")
        if kind == "moment":
            return cls("moment", k=int(spec["k"]))
        return cls("smooth", name=spec["name"], h=float(spec["h"]), degree=int(spec["degree"]))

    def to_dict(self) -> dict:
        if self.kind == "moment":
            return {"kind": "moment", "k": self.k}
        return {"kind": "smooth", "name": self.name, "h": self.h, "degree": self.degree}

    def __call__(self, theta):
        if self.kind == "moment":
            return np.asarray(theta, dtype=float) ** self.k
        return named_functional(self.name, self.h)(np.asarray(theta, dtype=float))

    @property
    def approx(self) -> PolyApprox:
        return _cached_approx(self.name, self.h, self.degree)


@lru_cache(maxsize=None)
def _cached_approx(name, h, degree):
    return chebyshev_approx(named_functional(name, h), h, degree)


@lru_cache(maxsize=None)
def mmse_reference(prior: Prior, functional: Functional) -> float:
    """Per-coordinate Bayes risk, computed once per (prior, functional)."""
    if functional.kind == "moment":
        return mmse(prior, functional.k)
    return mmse_functional(prior, named_functional(functional.name, functional.h))


def _posterior_table(prior: Prior, functional: Functional, x_max: int) -> np.ndarray:
    xs = np.arange(x_max + 1)
    if functional.kind == "moment":
        return bayes_estimate(prior, functional.k, xs)
    return np.array([_posterior_smooth(prior, functional, int(x)) for x in xs])


@lru_cache(maxsize=None)
def _posterior_smooth(prior, functional, x):
    return posterior_expectation(prior, named_functional(functional.name, functional.h), x)


# -- config ------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    prior: Prior
    functional: Functional
    estimators: tuple
    n_grid: tuple = DEFAULT_N_GRID
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    output: str = "records.csv"
    regret_estimator: str = "conditional"
    workers: int = 1
    cross_check: bool = False

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ValueError("n grid must be nonempty with every n >= 1")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n grid must be strictly increasing")
        valid = MOMENT_ESTIMATORS if self.functional.kind == "moment" else SMOOTH_ESTIMATORS
        bad = [e for e in self.estimators if e not in valid]
        if bad or not self.estimators:
            raise ValueError(f"invalid estimator names {bad}; choose from {valid}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ValueError("estimator names must be distinct")
        if self.regret_estimator not in REGRET_ESTIMATORS:
            raise ValueError(f"regret_estimator must be one of {REGRET_ESTIMATORS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        spec = dict(spec)
        spec["prior"] = prior_from_dict(spec["prior"])
        spec["functional"] = Functional.from_dict(spec["functional"])
        known = {f.name for f in fields(cls)}
        unknown = set(spec) - known
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**spec)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["prior"] = self.prior.to_dict()
        out["functional"] = self.functional.to_dict()
        out["estimators"] = list(self.estimators)
        out["n_grid"] = list(self.n_grid)
        return out


# -- one replicate -----------------------------------------------------------

def replicate_seed(base_seed: int, estimator: str, n: int, index: int) -> list:
    """Stream key for one replicate; a pure function of its four coordinates."""
    return [int(base_seed), zlib.crc32(estimator.encode()), int(n), int(index)]


def _clip_ceiling(prior: Prior, functional: Functional, x_max: int) -> float:
    h = prior.support_max
    if not math.isfinite(h):
        h = float(x_max)
    return h ** functional.k


def estimate_table(estimator: str, counts, prior: Prior, functional: Functional) -> np.ndarray:
    """Fitted rule of ``estimator`` on x = 0..x_max of the sample."""
    x_max = counts.x_max
    if functional.kind == "smooth":
        return smooth_table(counts, functional.approx, estimator, prior=prior)
    k = functional.k
    xs = np.arange(x_max + 1)
    if estimator == "oracle":
        return bayes_estimate(prior, k, xs)
    if estimator == "mom":
        return mom_estimate(xs, k)
    if estimator in ("robbins", "robbins-clipped"):
        clip = (0.0, _clip_ceiling(prior, functional, x_max)) if estimator.endswith("clipped") else None
        return robbins_table(counts, k, clip)
    if estimator == "erm":
        return erm_fit(counts, k).values
    if estimator == "erm-clipped":
        return erm_fit(counts, k).clip(0.0, _clip_ceiling(prior, functional, x_max)).values
    grid = make_grid(x_max, prior_class(prior))
    if estimator in ("npmle-plugin", "naive-plugin"):
        fitted, _ = npmle_fit(counts, grid)
    elif estimator == "hellinger-plugin":
        fitted, _ = mindist_fit(counts, grid, DivergenceKind.SQUARED_HELLINGER)
    elif estimator == "chisq-plugin":
        fitted, _ = mindist_fit(counts, grid, DivergenceKind.CHI_SQUARED)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    rule = naive_plugin if estimator == "naive-plugin" else plugin_bayes
    return rule(fitted, k, x_max).values


@dataclass(frozen=True)
class ReplicateResult:
    sse: float          # sum_i (T_i - l(theta_i))^2
    oracle_sse: float   # n * mmse
    conditional: float  # sum_i (T_i - E[l(theta) | X_i])^2
    last: float         # (T_n - E[l(theta) | X_n])^2, the held-out coordinate

    def regret(self, how: str) -> float:
        return self.conditional if how == "conditional" else self.sse - self.oracle_sse


def replicate_regret(prior: Prior, functional: Functional, estimator: str, n: int, seed) -> ReplicateResult:
    """Draw one sample of size n, fit, and score against the truth and the oracle.

    Both regret estimates are unbiased for the total regret: the direct one is
    ``sse - n * mmse``; the conditional one replaces each theta_i by its
    posterior mean and has far smaller Monte-Carlo variance.
    """
    thetas, xs = sample_channel(prior, n, seed)
    counts = tabulate(xs)
    table = estimate_table(estimator, counts, prior, functional)
    t_hat = table[xs]
    if not np.all(np.isfinite(t_hat)):
        raise ArithmeticError(f"{estimator} produced a non-finite estimate")
    t_bayes = _posterior_table(prior, functional, counts.x_max)[xs]
    return ReplicateResult(
        sse=math.fsum((t_hat - functional(thetas)) ** 2),
        oracle_sse=n * mmse_reference(prior, functional),
        conditional=math.fsum((t_hat - t_bayes) ** 2),
        last=float((t_hat[-1] - t_bayes[-1]) ** 2),
    )


# -- aggregation -------------------------------------------------------------

@dataclass(frozen=True)
class RegretRecord:
    """Per-cell summary. Regret and mmse are per coordinate; multiply by n for totals."""

    estimator: str
    n: int
    mean_regret: float
    se_regret: float
    rmse: float
    mmse: float
    replicates: int
    failed: int = 0
    # held-out single-coordinate regret, filled in only in cross-check mode
    individual_regret: float = field(default=math.nan, compare=False)
    se_individual: float = field(default=math.nan, compare=False)

    @property
    def mean_total_regret(self) -> float:
        return self.n * self.mean_regret

    @property
    def se_total_regret(self) -> float:
        return self.n * self.se_regret


def _mean_se(values):
    values = list(values)
    if not values:
        return math.nan, math.nan
    m = math.fsum(values) / len(values)
    if len(values) < 2:
        return m, math.nan
    var = math.fsum((v - m) ** 2 for v in values) / (len(values) - 1)
    return m, math.sqrt(var / len(values))


def _run_cell(args):
    prior, functional, estimator, n, seed, replicates, how, cross_check = args
    results = []
    for r in range(replicates):
        try:
            results.append(replicate_regret(prior, functional, estimator, n, replicate_seed(seed, estimator, n, r)))
        except (PoissonEBError, ArithmeticError, ValueError):
            results.append(None)
    ok = [res for res in results if res is not None]
    mean, se = _mean_se(res.regret(how) / n for res in ok)
    rmse = math.fsum(math.sqrt(res.sse / n) for res in ok) / len(ok) if ok else math.nan
    ind, se_ind = _mean_se(res.last for res in ok) if cross_check else (math.nan, math.nan)
    return RegretRecord(estimator, n, mean, se, rmse, mmse_reference(prior, functional),
                        replicates, replicates - len(ok), ind, se_ind)


def run_experiment(config: ExperimentConfig) -> list:
    """Regret records for every (estimator, n) cell, sorted by (estimator, n)."""
    mmse_reference(config.prior, config.functional)
    cells = [(config.prior, config.functional, e, n, config.seed, config.replicates,
              config.regret_estimator, config.cross_check)
             for e in sorted(config.estimators) for n in config.n_grid]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(_run_cell, cells))
    else:
        records = [_run_cell(c) for c in cells]
    return sorted(records, key=lambda r: (r.estimator, r.n))


# -- rate diagnostic ---------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def theoretical_rate(n, cls: PriorClassTag, k: int):
    """``(log n / log log n)^(k+1)`` on bounded classes, ``(log n)^(2k+1)`` on subexponential ones."""
    ln = np.log(np.asarray(n, dtype=float))
    if isinstance(cls, Bounded):
        return (ln / np.log(ln)) ** (k + 1)
    if isinstance(cls, SubExponential):
        return ln ** (2 * k + 1)
    raise TypeError(f"unknown prior class {cls!r}")


def rate_diagnostic(records, cls: PriorClassTag, k: int) -> RateFit:
    """Least-squares slope of log mean total regret on log theoretical rate."""
    ns = np.array([r.n for r in records], dtype=float)
    total = np.array([r.mean_total_regret for r in records], dtype=float)
    if np.unique(ns).size < 4:
        raise InsufficientPoints("rate diagnostic needs at least 4 distinct n values")
    if np.any(ns < 3):
        raise ValueError("the rate expression needs n >= 3")
    if np.any(~(total > 0)):
        raise ValueError("mean total regret must be positive to take logs")
    u = np.log(theoretical_rate(ns, cls, k))
    v = np.log(total)
    uc, vc = u - u.mean(), v - v.mean()
    sxx = float(uc @ uc)
    if sxx == 0:
        raise InsufficientPoints("rate expression is constant over the n grid")
    slope = float(uc @ vc) / sxx
    intercept = float(v.mean() - slope * u.mean())
    ss_res = float(np.sum((v - intercept - slope * u) ** 2))
    ss_tot = float(vc @ vc)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(slope, intercept, r2)


# -- output ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def emit_csv(records, path) -> None:
    """Write records with a fixed header; floats use shortest round-trip repr."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    except OSError as exc:
        raise OSError(f"cannot write records to {os.fspath(path)!r}: {exc}") from exc


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{os.fspath(path)!r} does not start with the records header")
    out = []
    for row in rows[1:]:
        d = dict(zip(CSV_HEADER, row))
        out.append(RegretRecord(d["estimator"], int(d["n"]), float(d["mean_regret"]), float(d["se_regret"]),
                                float(d["rmse"]), float(d["mmse"]), int(d["replicates"]), int(d["failed"])))
    return out


def emit_plots(records, out_dir) -> list:
    """One static log-x SVG line chart per metric; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "poisson-eb", "svg.fonttype": "path"}):
        for metric, label in (("mean_regret", "regret per coordinate"), ("rmse", "RMSE")):
            fig, ax = plt.subplots(figsize=(6, 4))
            for name in sorted({r.estimator for r in records}):
                rows = sorted((r for r in records if r.estimator == name), key=lambda r: r.n)
                ax.plot([r.n for r in rows], [getattr(r, metric) for r in rows], marker="o", label=name)
            ax.set_xscale("log")
            ax.set_xlabel("n")
            ax.set_ylabel(label)
            ax.legend()
            fig.tight_layout()
            path = os.path.join(out_dir, f"{metric}.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths

