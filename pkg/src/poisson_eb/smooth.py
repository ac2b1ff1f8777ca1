"""Posterior means of smooth functionals via polynomial approximation.

A functional l on [0, h] is replaced by a degree-k polynomial
``sum_m c_m theta^m`` and E[l(theta) | x] is estimated by combining
per-moment estimates of E[theta^m | x] with the same coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import NonFiniteFunction
from .estimators import SampleCounts, erm_fit, robbins_table
from .mindist import make_grid, npmle_fit, plugin_bayes
from .oracle import bayes_estimate
from .priors import SubExponential, prior_class

MAX_DEGREE = 30
_RESIDUAL_GRID = 10_000
_WORK_DPS = 50


def _exp(t):
    return mpmath.exp(t) if isinstance(t, mpmath.mpf) else np.exp(t)


def _sqrt(t):
    return mpmath.sqrt(t) if isinstance(t, mpmath.mpf) else np.sqrt(t)


def named_functional(name: str, h: float = 10.0):
    """Built-in test functionals: cube, exp, sqrt1p, lipschitz-abs."""
    if name == "cube":
        return lambda t: t**3
    if name == "exp":
        return _exp
    if name == "sqrt1p":
        return lambda t: _sqrt(1 + t)
    if name == "lipschitz-abs":
        return lambda t: abs(t - h / 2)
    raise KeyError(f"unknown functional {name!r}")


FUNCTIONALS = ("cube", "exp", "sqrt1p", "lipschitz-abs")


@dataclass(frozen=True)
class PolyApprox:
    degree: int
    coefficients: tuple
    sup_residual: float
    h: float
    sup_abs: float

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.polynomial.polynomial.polyval(theta, np.asarray(self.coefficients))

    def coefficient_bound(self) -> float:
        """``e^k max(1, h^k) (sup|l| + sup_residual)``, a ceiling on every |c_m|."""
        k = self.degree
        return math.exp(k) * max(1.0, self.h**k) * (self.sup_abs + self.sup_residual)

    def combine(self, alpha, other: "PolyApprox", beta) -> "PolyApprox":
        """Coefficient-wise ``alpha * self + beta * other`` (residual fields become bounds)."""
        if other.h != self.h:
            raise ValueError("approximations live on different intervals")
        k = max(self.degree, other.degree)
        a = np.zeros(k + 1)
        b = np.zeros(k + 1)
        a[: self.degree + 1] = self.coefficients
        b[: other.degree + 1] = other.coefficients
        return PolyApprox(k, tuple(alpha * a + beta * b),
                          abs(alpha) * self.sup_residual + abs(beta) * other.sup_residual,
                          self.h, abs(alpha) * self.sup_abs + abs(beta) * other.sup_abs)


def _eval_mp(func, t):
    try:
        value = func(t)
        return mpmath.mpf(value) if not isinstance(value, mpmath.mpf) else value
    except (TypeError, AttributeError):
        return mpmath.mpf(float(func(float(t))))


def chebyshev_approx(func, h: float, k: int) -> PolyApprox:
    """Degree-k Chebyshev-Lobatto interpolant of ``func`` on [0, h] in the monomial basis.

    Node values, Chebyshev coefficients and the change of basis are carried in
    50-digit arithmetic and rounded once at the end. Functions that reject
    mpmath numbers are evaluated in double precision at the same nodes.
    """
    if k < 0:
        raise ValueError("degree must be >= 0")
    if k > MAX_DEGREE:
        raise ValueError(f"degree {k} exceeds {MAX_DEGREE}; monomial coefficients are too ill-conditioned")
    if not h > 0:
        raise ValueError("h must be positive")
    with mpmath.workdps(_WORK_DPS):
        H = mpmath.mpf(h)
        if k == 0:
            power = [_eval_mp(func, H / 2)]
        else:
            nodes = [mpmath.cos(mpmath.pi * j / k) for j in range(k + 1)]
            vals = [_eval_mp(func, H * (1 + u) / 2) for u in nodes]
            if not all(mpmath.isfinite(v) for v in vals):
                raise NonFiniteFunction("functional is not finite at the interpolation nodes")
            cheb = []
            for m in range(k + 1):
                acc = mpmath.mpf(0)
                for j in range(k + 1):
                    term = vals[j] * mpmath.cos(mpmath.pi * m * j / k)
                    acc += term / 2 if j in (0, k) else term
                c = 2 * acc / k
                cheb.append(c / 2 if m in (0, k) else c)
            # coefficients at working-precision roundoff are exact zeros (e.g. polynomial l)
            scale_v = max(abs(v) for v in vals)
            cheb = [mpmath.mpf(0) if abs(c) <= scale_v * mpmath.mpf(10) ** (10 - _WORK_DPS) else c
                    for c in cheb]
            # T_m(u) in powers of u via T_{m+1} = 2u T_m - T_{m-1}
            T = [[mpmath.mpf(1)], [mpmath.mpf(0), mpmath.mpf(1)]]
            for m in range(2, k + 1):
                nxt = [mpmath.mpf(0)] + [2 * c for c in T[m - 1]]
                for i, c in enumerate(T[m - 2]):
                    nxt[i] -= c
                T.append(nxt)
            u_power = [mpmath.mpf(0)] * (k + 1)
            for m in range(k + 1):
                for i, c in enumerate(T[m]):
                    u_power[i] += cheb[m] * c
            power = [mpmath.mpf(0)] * (k + 1)
            magnitude = [mpmath.mpf(0)] * (k + 1)
            scale = 2 / H
            for i, a in enumerate(u_power):
                for j in range(i + 1):
                    term = a * mpmath.binomial(i, j) * scale**j * (-1) ** (i - j)
                    power[j] += term
                    magnitude[j] += abs(term)
            eps = mpmath.mpf(10) ** (10 - _WORK_DPS)
            power = [mpmath.mpf(0) if abs(p) <= eps * mag else p for p, mag in zip(power, magnitude)]
        coeffs = tuple(float(c) for c in power) + (0.0,) * (k + 1 - len(power))
    grid = np.linspace(0.0, h, _RESIDUAL_GRID)
    target = _eval_grid(func, grid)
    if not np.all(np.isfinite(target)):
        raise NonFiniteFunction("functional is not finite on [0, h]")
    approx = np.polynomial.polynomial.polyval(grid, np.asarray(coeffs))
    return PolyApprox(k, coeffs, float(np.max(np.abs(target - approx))), float(h),
                      float(np.max(np.abs(target))))


def _eval_grid(func, grid):
    try:
        out = np.asarray(func(grid), dtype=float)
        if out.shape == grid.shape:
            return out
    except (TypeError, ValueError, AttributeError):
        pass
    return np.array([float(func(float(t))) for t in grid])


def select_degree(n: int, c: float = 0.5) -> int:
    """``max(1, floor(c log n / log log n))``, and 1 for n < e^e.

    ``log n / log log n`` blows up as n falls to e and only increases past
    n = e^e (about 15.2), so below that point the degree is pinned at 1 to
    keep the rule nondecreasing in n.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    ln = math.log(n)
    if ln < math.e:
        return 1
    return max(1, math.floor(c * ln / math.log(ln)))


BACKENDS = ("robbins", "erm", "npmle-plugin", "oracle")


def moment_tables(counts: SampleCounts, k: int, backend: str, prior=None, grid=None):
    """Row m (1..k) holds the backend's estimate of E[theta^m | x] on x = 0..x_max.

    Fits are made once per moment; the NPMLE backend fits the mixture once and
    reuses it for every moment.
    """
    xs = np.arange(counts.x_max + 1)
    rows = np.ones((k + 1, xs.size))
    if backend == "robbins":
        for m in range(1, k + 1):
            rows[m] = robbins_table(counts, m)
    elif backend == "erm":
        for m in range(1, k + 1):
            rows[m] = erm_fit(counts, m).values
    elif backend == "npmle-plugin":
        if grid is None:
            cls = prior_class(prior) if prior is not None else SubExponential(1.0)
            grid = make_grid(counts.x_max, cls)
        fitted, _ = npmle_fit(counts, grid)
        for m in range(1, k + 1):
            rows[m] = plugin_bayes(fitted, m, counts.x_max).values
    elif backend == "oracle":
        if prior is None:
            raise ValueError("the oracle backend needs the true prior")
        for m in range(1, k + 1):
            rows[m] = bayes_estimate(prior, m, xs)
    else:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    return rows


def smooth_table(counts: SampleCounts, approx: PolyApprox, backend: str, prior=None, grid=None) -> np.ndarray:
    """``c_0 + sum_m c_m T_m(x)`` on x = 0..x_max (NaN where a Robbins moment is undefined)."""
    rows = moment_tables(counts, approx.degree, backend, prior, grid)
    c = np.asarray(approx.coefficients)
    out = np.full(rows.shape[1], c[0])
    for m in range(1, approx.degree + 1):
        if c[m] != 0.0:
            out = out + c[m] * rows[m]
    return out


def smooth_estimate(counts: SampleCounts, approx: PolyApprox, backend: str, x, prior=None, grid=None):
    """Estimate of E[l(theta) | X = x] from the polynomial surrogate and per-moment backends."""
    table = smooth_table(counts, approx, backend, prior, grid)
    x = np.asarray(x, dtype=np.int64)
    out = table[np.clip(x, 0, counts.x_max)]
    return float(out) if out.ndim == 0 else out
