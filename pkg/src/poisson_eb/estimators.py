"""f-modeling estimators of E[theta^k | X] built from the count table.

Everything here sees the sample only through :class:`SampleCounts`, so all
fitted rules are invariant to permutations of the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySample, InvalidBounds
from .oracle import falling_factorial, pochhammer


@dataclass(frozen=True, eq=False)
class SampleCounts:
    """Frequency table N(x) of observed Poisson counts.

    ``freq[x]`` holds N(x) for x = 0..x_max (zeros included); ``counts`` is the
    sparse view keyed by observed values only.
    """

    freq: np.ndarray

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=np.int64)
        if freq.ndim != 1 or freq.size == 0 or freq.sum() == 0 or np.any(freq < 0):
            raise EmptySample("count table must hold at least one observation")
        freq = np.trim_zeros(freq, "b")
        freq.setflags(write=False)
        object.__setattr__(self, "freq", freq)

    @property
    def n(self) -> int:
        return int(self.freq.sum())

    @property
    def x_max(self) -> int:
        return self.freq.size - 1

    @property
    def counts(self) -> dict:
        return {int(x): int(c) for x, c in enumerate(self.freq) if c > 0}

    def N(self, x):
        """N(x) for integer or array ``x``; zero outside 0..x_max."""
        x = np.asarray(x, dtype=np.int64)
        inside = (x >= 0) & (x <= self.x_max)
        out = np.where(inside, self.freq[np.clip(x, 0, self.x_max)], 0)
        return int(out) if out.ndim == 0 else out

    def __eq__(self, other):
        return isinstance(other, SampleCounts) and np.array_equal(self.freq, other.freq)

    def __hash__(self):
        return hash(self.freq.tobytes())


def tabulate(xs) -> SampleCounts:
    xs = np.asarray(xs, dtype=np.int64).ravel()
    if xs.size == 0:
        raise EmptySample("cannot tabulate an empty sample")
    if np.any(xs < 0):
        raise ValueError("Poisson counts must be nonnegative")
    return SampleCounts(np.bincount(xs))


@dataclass(frozen=True, eq=False)
class StepEstimator:
    """Nondecreasing step rule on 0..x_max, constant at its last value beyond.

    ``values[x]`` is the estimate at count x.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("a step estimator needs at least one value")
        if np.any(values < 0) or np.any(np.diff(values) < 0):
            raise ValueError("step estimator values must be nonnegative and nondecreasing")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def x_max(self) -> int:
        return self.values.size - 1

    @property
    def breakpoints(self):
        """(x, value) pairs where the rule changes, starting at x = 0."""
        change = np.flatnonzero(np.diff(self.values)) + 1
        idx = np.concatenate([[0], change])
        return [(int(i), float(self.values[i])) for i in idx]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.int64)
        out = self.values[np.clip(x, 0, self.x_max)]
        return float(out) if out.ndim == 0 else out

    def clip(self, a, b) -> "StepEstimator":
        return StepEstimator(np.clip(self.values, a, b))


def mom_estimate(x, k: int):
    """Unbiased estimate ``x (x-1) ... (x-k+1)`` of theta^k from a single count."""
    return falling_factorial(x, k)


def _shifted_mass(counts: SampleCounts, k: int) -> np.ndarray:
    """``(x+1)_k N(x+k)`` for x = 0..x_max."""
    xs = np.arange(counts.x_max + 1)
    return pochhammer(xs + 1, k) * counts.N(xs + k)


def robbins_table(counts: SampleCounts, k: int, clip=None) -> np.ndarray:
    """Dense Robbins estimates on 0..x_max; NaN where N(x) = 0."""
    num = _shifted_mass(counts, k)
    den = counts.freq.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, np.nan)
    if clip is not None:
        out = np.clip(out, *clip)
    return out


def robbins_fit(counts: SampleCounts, k: int, clip=None) -> dict:
    """``(x+1)_k N(x+k) / N(x)`` at every observed x.

    ``clip=(a, b)`` optionally clamps the estimates, e.g. to [0, h^k] for priors on [0, h].
    """
    table = robbins_table(counts, k, clip)
    return {x: float(table[x]) for x in counts.counts}


def _as_values(t, x_max: int) -> np.ndarray:
    xs = np.arange(x_max + 1)
    if isinstance(t, StepEstimator):
        return np.asarray(t(xs), dtype=float)
    if callable(t):
        return np.asarray([t(int(x)) for x in xs], dtype=float)
    t = np.asarray(t, dtype=float)
    if t.size <= x_max:
        t = np.concatenate([t, np.full(x_max + 1 - t.size, t[-1])])
    return t[: x_max + 1]


def erm_objective(counts: SampleCounts, k: int, t) -> float:
    """Empirical risk ``(1/n) sum_x [N(x) t(x)^2 - 2 (x+1)_k N(x+k) t(x)]``.

    ``t`` may be a StepEstimator, a callable on integers, or an array of values
    on 0..x_max (extended at its last entry).
    """
    values = _as_values(t, counts.x_max)
    quad = counts.freq * values**2
    lin = 2.0 * _shifted_mass(counts, k) * values
    return float(np.sum(quad - lin) / counts.n)


def erm_fit(counts: SampleCounts, k: int) -> StepEstimator:
    """Minimiser of :func:`erm_objective` over nondecreasing nonnegative rules.

    Weighted isotonic regression in min-max form::

        t(x) = max_{u <= x} min_{v >= x, D(u,v) > 0} A(u,v) / D(u,v)

    where A and D are block sums of ``(i+1)_k N(i+k)`` and ``N(i)``. Blocks with
    no observations are left out of the inner minimum. O(x_max^2).
    """
    if counts.n == 0:
        raise EmptySample("cannot fit ERM to an empty sample")
    m = counts.x_max + 1
    A = np.concatenate([[0.0], np.cumsum(_shifted_mass(counts, k))])
    D = np.concatenate([[0], np.cumsum(counts.freq)])
    # block[u, v] = A(u, v) / D(u, v) for u <= v with D > 0, +inf otherwise
    num = A[None, 1:] - A[:-1, None]
    den = (D[None, 1:] - D[:-1, None]).astype(float)
    valid = np.triu(np.ones((m, m), dtype=bool)) & (den > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        block = np.where(valid, num / den, np.inf)
    # inner[u, x] = min_{v >= x} block[u, v]
    inner = np.minimum.accumulate(block[:, ::-1], axis=1)[:, ::-1]
    inner = np.where(np.tril(np.ones((m, m), dtype=bool)).T, inner, -np.inf)
    values = np.max(inner, axis=0)
    return StepEstimator(np.maximum(values, 0.0))


def erm_fit_clipped(counts: SampleCounts, k: int, a: float, b: float) -> StepEstimator:
    """ERM over nondecreasing rules with values in [a, b]; the clipped unconstrained ERM."""
    if not (0 <= a < b):
        raise InvalidBounds(f"need 0 <= a < b, got a={a}, b={b}")
    return erm_fit(counts, k).clip(a, b)
