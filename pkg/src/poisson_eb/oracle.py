"""Exact Poisson-mixture computations under a known prior.

All pmf work happens in log space: f_pi(x) underflows long before the
tail cutoffs used at large sample sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import UnsupportedPoint
from .priors import (Bounded, Exponential, Gamma, PointMasses, Prior, PriorClassTag,
                     SubExponential, Uniform, make_rng)

_GL_NODES = 128
_GL_RTOL = 1e-11
_MMSE_TAIL_TOL = 1e-10


def pochhammer(x, m: int):
    """Rising factorial ``x (x+1) ... (x+m-1)``; works elementwise on arrays."""
    if m < 0:
        raise ValueError("m must be >= 0")
    out = np.ones_like(np.asarray(x, dtype=float))
    for j in range(m):
        out = out * (np.asarray(x, dtype=float) + j)
    return float(out) if np.ndim(out) == 0 else out


def falling_factorial(x, k: int):
    """``x (x-1) ... (x-k+1)``, i.e. ``pochhammer(x - k + 1, k)``; zero for integer 0 <= x < k."""
    return pochhammer(np.asarray(x, dtype=float) - k + 1, k)


def log_poisson_pmf(x, theta):
    """log P(Poisson(theta) = x) with 0**0 = 1; broadcasts."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return special.xlogy(x, theta) - theta - special.gammaln(x + 1)


@lru_cache(maxsize=1)
def _gauss_legendre():
    return np.polynomial.legendre.leggauss(_GL_NODES)


def _log_gl_integral(logg, a, b):
    nodes, weights = _gauss_legendre()
    half = 0.5 * (b - a)
    t = a + half * (nodes + 1.0)
    return special.logsumexp(logg(t) + np.log(weights)) + math.log(half)


def _log_adaptive_integral(logg, a, b, whole=None, depth=0):
    # dyadic refinement until the two halves agree with the whole in relative terms
    if whole is None:
        whole = _log_gl_integral(logg, a, b)
    mid = 0.5 * (a + b)
    left = _log_gl_integral(logg, a, mid)
    right = _log_gl_integral(logg, mid, b)
    halves = np.logaddexp(left, right)
    if not np.isfinite(halves) or abs(math.expm1(whole - halves)) <= _GL_RTOL or depth >= 30:
        return halves
    return np.logaddexp(_log_adaptive_integral(logg, a, mid, left, depth + 1),
                        _log_adaptive_integral(logg, mid, b, right, depth + 1))


@lru_cache(maxsize=65536)
def _log_pmf_uniform_at(lo, hi, x):
    return float(_log_adaptive_integral(lambda t: log_poisson_pmf(x, t), lo, hi)) - math.log(hi - lo)


def _log_pmf_uniform(prior: Uniform, x):
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    return np.array([_log_pmf_uniform_at(prior.lo, prior.hi, int(xi)) for xi in x.ravel()])


def _log_pmf_gamma(prior: Gamma, x):
    # negative binomial with success probability rate / (1 + rate)
    a, b = prior.shape, prior.rate
    x = np.asarray(x, dtype=float)
    return (special.gammaln(x + a) - special.gammaln(a) - special.gammaln(x + 1)
            + a * math.log(b / (1 + b)) - x * math.log1p(b))


def _log_pmf_point_masses(prior: PointMasses, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lw = np.log(np.asarray(prior.weights))
    terms = lw[None, :] + log_poisson_pmf(x[:, None], np.asarray(prior.atoms)[None, :])
    return special.logsumexp(terms, axis=1)


def log_mixture_pmf(prior: Prior, x):
    """log f_pi(x) for an integer or an array of integers."""
    scalar = np.ndim(x) == 0
    if isinstance(prior, PointMasses):
        out = _log_pmf_point_masses(prior, x)
    elif isinstance(prior, Uniform):
        out = _log_pmf_uniform(prior, x)
    elif isinstance(prior, Exponential):
        out = _log_pmf_gamma(prior.as_gamma, x)
    elif isinstance(prior, Gamma):
        out = _log_pmf_gamma(prior, x)
    else:
        raise TypeError(f"unsupported prior {prior!r}")
    out = np.asarray(out, dtype=float)
    return float(out.reshape(-1)[0]) if scalar else out.reshape(np.shape(x))


def mixture_pmf(prior: Prior, x):
    return np.exp(log_mixture_pmf(prior, x))


def bayes_estimate(prior: Prior, k: int, x):
    """Posterior moment E[theta^k | X = x] through the Tweedie identity.

    ``(x+1)_k f(x+k) / f(x)``, with the ratio taken in log space.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if k == 0:
        out = np.ones(xs.shape)
    else:
        lf = log_mixture_pmf(prior, np.concatenate([xs, xs + k]))
        lf_x, lf_xk = lf[: xs.size], lf[xs.size:]
        if np.any(np.isneginf(lf_x)):
            bad = xs[np.isneginf(lf_x)]
            raise UnsupportedPoint(f"mixture pmf underflows at x={bad.tolist()}")
        log_poch = special.gammaln(xs + k + 1.0) - special.gammaln(xs + 1.0)
        out = np.exp(log_poch + lf_xk - lf_x)
    return float(out[0]) if scalar else out


def posterior_expectation(prior: Prior, func, x: int) -> float:
    """E[func(theta) | X = x] by direct integration against the posterior.

    Independent of the Tweedie route; used for general functionals and as a check.
    """
    if isinstance(prior, PointMasses):
        atoms = np.asarray(prior.atoms)
        logw = np.log(np.asarray(prior.weights)) + log_poisson_pmf(x, atoms)
        if np.all(np.isneginf(logw)):
            raise UnsupportedPoint(f"mixture pmf underflows at x={x}")
        post = np.exp(logw - special.logsumexp(logw))
        return math.fsum(post * np.asarray(func(atoms), dtype=float))
    if isinstance(prior, Exponential):
        prior = prior.as_gamma
    if isinstance(prior, Uniform):
        lo, hi = prior.lo, prior.hi
        logdens = lambda t: log_poisson_pmf(x, t)
    else:
        # posterior is Gamma(x + shape, rate + 1)
        a, b = x + prior.shape, prior.rate + 1.0
        lo, hi = 0.0, (a + 40.0 * math.sqrt(a) + 60.0) / b
        if a < 1:
            # integrable singularity at 0: let quad's algebraic weight t^(a-1) carry it
            opts = dict(epsabs=0.0, epsrel=1e-13, limit=200, weight="alg", wvar=(a - 1.0, 0.0))
            z, _ = integrate.quad(lambda t: math.exp(-b * t), lo, hi, **opts)
            num, _ = integrate.quad(lambda t: float(func(t)) * math.exp(-b * t), lo, hi, **opts)
            return num / z
        logdens = lambda t: special.xlogy(a - 1, t) - b * t
    peak = max(min(x, hi), lo)
    logmax = float(np.max(logdens(np.linspace(lo, hi, 2001))))
    logmax = max(logmax, float(logdens(np.asarray(peak))))
    dens = lambda t: math.exp(float(logdens(np.asarray(t))) - logmax)
    pts = [peak] if lo < peak < hi else None
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200, points=pts)
    z, _ = integrate.quad(dens, lo, hi, **opts)
    num, _ = integrate.quad(lambda t: float(func(t)) * dens(t), lo, hi, **opts)
    return num / z


def chernoff_tail(h: float, x: float) -> float:
    """Upper bound on P(X >= x) for any mixture supported on [0, h]; valid for x >= h."""
    if x <= 0:
        return 1.0
    if h == 0:
        return 0.0
    return math.exp(min(0.0, x * (1.0 + math.log(h)) - h - x * math.log(x)))


@dataclass(frozen=True)
class TailCutoff:
    x0: int
    prior_class: PriorClassTag
    n: int
    tail_bound: float


def tail_cutoff(prior_class: PriorClassTag, n: int) -> TailCutoff:
    """Count level beyond which the class-uniform mixture tail is at most about 1/n.

    Bounded(h): smallest integer x0 >= h (and >= 1) whose Chernoff bound
    ``(e h)^x0 e^-h / x0^x0`` is <= 1/n. SubExponential(s): ``ceil((s+1) log n)``,
    reported with the geometric bound ``2 (s+1) (1 + 1/s)^-x0``.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if isinstance(prior_class, Bounded):
        h = prior_class.h
        x0 = max(1, math.ceil(h))
        while chernoff_tail(h, x0) > 1.0 / n:
            x0 += 1
        return TailCutoff(x0, prior_class, n, chernoff_tail(h, x0))
    s = prior_class.s
    x0 = math.ceil((s + 1) * math.log(n))
    bound = min(1.0, 2.0 * (s + 1) * math.exp(-x0 * math.log1p(1.0 / s)))
    return TailCutoff(x0, prior_class, n, bound)


@dataclass(frozen=True)
class MixturePmfCache:
    """log f_pi(x) for x = 0..cutoff, where the mass beyond cutoff is below ``tail_tol``."""

    prior: Prior
    log_pmf: np.ndarray
    cutoff: int

    @property
    def pmf(self):
        return np.exp(self.log_pmf)


def _tail_mass_bound(prior: Prior, x: int, log_pmf_next=None) -> float:
    """Bound on P(X > x)."""
    h = prior.support_max
    if math.isfinite(h):
        return chernoff_tail(h, x + 1) if x + 1 >= h else 1.0
    g = prior.as_gamma if isinstance(prior, Exponential) else prior
    # negative binomial term ratio (y + a) / ((y + 1)(1 + b)), decreasing in y once a >= 1
    ratio = (x + 1 + g.shape) / ((x + 2) * (1 + g.rate))
    if g.shape < 1:
        ratio = 1.0 / (1 + g.rate)
    if ratio >= 1 or log_pmf_next is None:
        return 1.0
    return math.exp(log_pmf_next) / (1 - ratio)


def build_pmf_cache(prior: Prior, tail_tol: float = 1e-12, chunk: int = 64) -> MixturePmfCache:
    logs = []
    x = 0
    while True:
        block = np.atleast_1d(log_mixture_pmf(prior, np.arange(x, x + chunk)))
        logs.extend(block.tolist())
        for j in range(x, x + chunk - 1):
            if _tail_mass_bound(prior, j, logs[j + 1]) < tail_tol:
                return MixturePmfCache(prior, np.asarray(logs[: j + 1]), j)
        x += chunk
        if x > 10**6:
            raise RuntimeError("pmf tail did not become negligible")


def _moment_tail_bound(prior: Prior, k: int, x: int, log_pmf_next: float) -> float:
    """Bound on sum_{y > x} f(y) E[theta^2k | y] = E[theta^2k; X > x]."""
    h = prior.support_max
    if math.isfinite(h):
        return h ** (2 * k) * (chernoff_tail(h, x + 1) if x + 1 >= h else 1.0)
    g = prior.as_gamma if isinstance(prior, Exponential) else prior
    a, b = g.shape, g.rate

    # term(y) = f(y) (y + a)_{2k} / (1 + b)^{2k}; its successive ratio decreases in y
    def log_term(y, lf):
        return lf + special.gammaln(y + a + 2 * k) - special.gammaln(y + a) - 2 * k * math.log1p(b)

    y = x + 1
    ratio = (y + a + 2 * k) / ((y + 1) * (1 + b))
    if ratio >= 1:
        return math.inf
    return math.exp(log_term(y, log_pmf_next)) / (1 - ratio)


def mmse(prior: Prior, k: int) -> float:
    """Bayes risk of estimating theta^k, ``sum_x f(x) Var(theta^k | X = x)``.

    Each summand ``(x+1)_{2k} f(x+2k) - f(x) t(x)^2`` is a nonnegative
    conditional variance, so the series is summed termwise until the
    bound on the remaining mass of ``theta^{2k}`` drops below 1e-10.
    """
    total = []
    x = 0
    chunk = 64
    with np.errstate(invalid="ignore", over="ignore"):
        return _mmse_series(prior, k, total, x, chunk)


def _mmse_series(prior, k, total, x, chunk):
    while True:
        xs = np.arange(x, x + chunk)
        lf = np.atleast_1d(log_mixture_pmf(prior, np.arange(x, x + chunk + 2 * k)))
        lf_x, lf_2k, lf_k = lf[:chunk], lf[2 * k:2 * k + chunk], lf[k:k + chunk]
        ok = np.isfinite(lf_x)
        log_p2k = special.gammaln(xs + 2 * k + 1.0) - special.gammaln(xs + 1.0)
        log_pk = special.gammaln(xs + k + 1.0) - special.gammaln(xs + 1.0)
        second = np.where(ok, np.exp(log_p2k + lf_2k), 0.0)
        first_sq = np.where(ok, np.exp(2 * (log_pk + lf_k) - lf_x), 0.0)
        terms = np.maximum(second - first_sq, 0.0)
        for j in range(chunk):
            total.append(terms[j])
            if _moment_tail_bound(prior, k, x + j, lf[j + 1]) < _MMSE_TAIL_TOL:
                return math.fsum(total)
        x += chunk
        if x > 10**6:
            raise RuntimeError("mmse series did not converge")


def mmse_functional(prior: Prior, func, tail_tol: float = 1e-12) -> float:
    """Bayes risk ``E[func(theta)^2] - sum_x f(x) E[func(theta) | x]^2`` for a general functional.

    Uses termwise conditional variances up to the pmf cache cutoff.
    """
    cache = build_pmf_cache(prior, tail_tol)
    pmf = cache.pmf
    terms = []
    for x in range(cache.cutoff + 1):
        if pmf[x] <= 0:
            continue
        m1 = posterior_expectation(prior, func, x)
        m2 = posterior_expectation(prior, lambda t: np.asarray(func(t), dtype=float) ** 2, x)
        terms.append(pmf[x] * max(m2 - m1 * m1, 0.0))
    return math.fsum(terms)


def sample_channel(prior: Prior, n: int, seed):
    """Draw theta_i ~ prior then X_i ~ Poisson(theta_i) from one seeded stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    thetas = prior.draw(rng, n)
    xs = rng.poisson(thetas)
    return thetas, xs.astype(np.int64)
