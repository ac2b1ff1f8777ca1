"""Independent reference computations used by the tests.

Each helper recomputes a quantity by a route that shares no code with the
package: high-precision sums, dynamic programming over value grids, or
per-sample loops instead of count tables.
"""

import math

import mpmath
import numpy as np


def mp_posterior_moment(atoms, weights, k, x, dps=40):
    """sum w e^-t t^(x+k) / sum w e^-t t^x in extended precision (0^0 = 1)."""
    with mpmath.workdps(dps):
        num = mpmath.mpf(0)
        den = mpmath.mpf(0)
        for a, w in zip(atoms, weights):
            a = mpmath.mpf(a)
            base = mpmath.mpf(w) * mpmath.exp(-a)
            den += base * (a**x if x > 0 else 1)
            num += base * (a ** (x + k) if x + k > 0 else 1)
        return float(num / den)


def mp_mixture_pmf(atoms, weights, x, dps=40):
    with mpmath.workdps(dps):
        return float(mpmath.fsum(mpmath.mpf(w) * mpmath.exp(-a) * mpmath.mpf(a) ** x / mpmath.factorial(x)
                                 for a, w in zip(atoms, weights)))


def per_sample_erm_objective(xs, k, values):
    """(1/n) sum_i [t(X_i)^2 - 2 (X_i - k + 1)_k t(X_i - k)], t extended as a constant."""
    values = np.asarray(values, dtype=float)

    def t(x):
        return values[min(max(x, 0), values.size - 1)]

    total = 0.0
    for x in xs:
        ff = math.prod(x - j for j in range(k))
        shifted = t(x - k) if x - k >= 0 else 0.0
        total += t(x) ** 2 - 2.0 * ff * shifted
    return total / len(xs)


def monotone_value_grid_dp(freq, shifted, grid):
    """Minimise sum_x [freq(x) t(x)^2 - 2 shifted(x) t(x)] over nondecreasing t with values in ``grid``.

    Plain dynamic programming: best[j] is the cheapest prefix ending at grid value j.
    Returns (values, objective).
    """
    grid = np.asarray(grid, dtype=float)
    m = len(freq)
    cost = np.asarray(freq, float)[:, None] * grid[None, :] ** 2 - 2.0 * np.asarray(shifted, float)[:, None] * grid[None, :]
    best = cost[0].copy()
    arg = np.zeros((m, grid.size), dtype=np.int64)
    for x in range(1, m):
        run_min = np.minimum.accumulate(best)
        run_arg = np.zeros(grid.size, dtype=np.int64)
        cur = 0
        for j in range(grid.size):
            if best[j] < best[cur]:
                cur = j
            run_arg[j] = cur
        arg[x] = run_arg
        best = run_min + cost[x]
    j = int(np.argmin(best))
    out = np.empty(m, dtype=np.int64)
    out[-1] = j
    for x in range(m - 1, 0, -1):
        out[x - 1] = arg[x][out[x]]
    return grid[out], float(best[j])


def block_ratios(freq, shifted):
    """Every consecutive-block ratio sum(shifted)/sum(freq) with a positive denominator."""
    out = {0.0}
    m = len(freq)
    for u in range(m):
        a = d = 0
        for v in range(u, m):
            a += shifted[v]
            d += freq[v]
            if d > 0:
                out.add(max(a / d, 0.0))
    return sorted(out)


def poisson_quad_mixture_pmf(density, lo, hi, x, nodes=100_001):
    """Composite Simpson on an equispaced grid of the mixture pmf under a prior density."""
    t = np.linspace(lo, hi, nodes)
    with np.errstate(divide="ignore"):
        logp = x * np.log(np.where(t > 0, t, 1.0)) - t - math.lgamma(x + 1)
    vals = np.exp(logp) * density(t)
    if x > 0:
        vals = np.where(t > 0, vals, 0.0)
    w = np.ones(nodes)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(w @ vals * (t[1] - t[0]) / 3)
