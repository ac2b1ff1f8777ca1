"""Mixing distributions on theta >= 0.

Every prior is an immutable dataclass. Sampling always goes through an
explicit seed, so the same ``(prior, n, seed)`` triple reproduces the same
draws bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .errors import InvalidPrior, ZeroMassBelowCutoff

# Continuous priors are discretised on this many equispaced nodes when truncated.
TRUNCATION_NODES = 2049


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` (an int or a sequence of ints)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _check_nonneg_finite(name, value):
    if not (math.isfinite(value) and value >= 0):
        raise InvalidPrior(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class PointMasses:
    atoms: tuple
    weights: tuple

    def __post_init__(self):
        atoms = tuple(float(a) for a in np.atleast_1d(self.atoms))
        weights = tuple(float(w) for w in np.atleast_1d(self.weights))
        if len(atoms) == 0 or len(atoms) != len(weights):
            raise InvalidPrior("atoms and weights must be nonempty and equally long")
        for a in atoms:
            _check_nonneg_finite("atom", a)
        if any(not (w > 0 and math.isfinite(w)) for w in weights):
            raise InvalidPrior("weights must be strictly positive")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise InvalidPrior(f"weights sum to {math.fsum(weights)!r}, not 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_arrays(cls, atoms, weights, normalize=True):
        """Build from arrays, dropping zero weights and optionally renormalising."""
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        if normalize:
            weights = weights / math.fsum(weights)
        return cls(tuple(atoms), tuple(weights))

    @property
    def support_max(self) -> float:
        return max(self.atoms)

    def draw(self, rng, n):
        idx = rng.choice(len(self.atoms), size=n, p=np.asarray(self.weights))
        return np.asarray(self.atoms)[idx]

    def moment(self, p):
        a = np.asarray(self.atoms)
        return math.fsum(np.asarray(self.weights) * a**p)

    def tail_prob(self, t):
        return min(1.0, math.fsum(w for a, w in zip(self.atoms, self.weights) if a > t))

    def truncate(self, h):
        pairs = [(a, w) for a, w in zip(self.atoms, self.weights) if a <= h]
        if not pairs:
            raise ZeroMassBelowCutoff(f"no atom at or below {h}")
        atoms, weights = zip(*pairs)
        return PointMasses.from_arrays(atoms, weights)

    def to_dict(self):
        return {"kind": "point_masses", "atoms": list(self.atoms), "weights": list(self.weights)}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        _check_nonneg_finite("lo", self.lo)
        _check_nonneg_finite("hi", self.hi)
        if not self.hi > self.lo:
            raise InvalidPrior("Uniform requires hi > lo")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @property
    def support_max(self) -> float:
        return self.hi

    def draw(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)

    def moment(self, p):
        return (self.hi ** (p + 1) - self.lo ** (p + 1)) / ((p + 1) * (self.hi - self.lo))

    def tail_prob(self, t):
        return float(np.clip((self.hi - t) / (self.hi - self.lo), 0.0, 1.0))

    def truncate(self, h):
        if h <= self.lo:
            raise ZeroMassBelowCutoff(f"Uniform({self.lo}, {self.hi}) has no mass below {h}")
        return Uniform(self.lo, min(self.hi, h))

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Gamma:
    """Gamma prior with density ``rate**shape * t**(shape-1) * exp(-rate*t) / Gamma(shape)``."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0 and math.isfinite(self.shape) and math.isfinite(self.rate)):
            raise InvalidPrior("Gamma requires finite shape > 0 and rate > 0")
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def support_max(self) -> float:
        return math.inf

    def draw(self, rng, n):
        return rng.gamma(self.shape, 1.0 / self.rate, size=n)

    def moment(self, p):
        # (shape)_p / rate**p
        return math.exp(special.gammaln(self.shape + p) - special.gammaln(self.shape) - p * math.log(self.rate))

    def tail_prob(self, t):
        if t <= 0:
            return 1.0
        return float(special.gammaincc(self.shape, self.rate * t))

    def truncate(self, h):
        a, b = self.shape, self.rate
        return _discretize(lambda t: np.exp(special.xlogy(a - 1, t) - b * t),
                           lambda t: special.gammainc(a, b * t),
                           h, singular_at_zero=a < 1,
                           partial_mean=lambda t: a / b * special.gammainc(a + 1, b * t))

    def to_dict(self):
        return {"kind": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class Exponential:
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidPrior("Exponential requires a finite scale > 0")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def as_gamma(self) -> Gamma:
        return Gamma(1.0, 1.0 / self.scale)

    @property
    def support_max(self) -> float:
        return math.inf

    def draw(self, rng, n):
        return rng.exponential(self.scale, size=n)

    def moment(self, p):
        return math.factorial(p) * self.scale**p

    def tail_prob(self, t):
        return 1.0 if t <= 0 else math.exp(-t / self.scale)

    def truncate(self, h):
        return self.as_gamma.truncate(h)

    def to_dict(self):
        return {"kind": "exponential", "scale": self.scale}


Prior = Union[PointMasses, Uniform, Gamma, Exponential]


def _discretize(density, cdf, h, singular_at_zero=False, partial_mean=None):
    """Equispaced grid on [0, h] carrying composite-Simpson weights of ``density``.

    A density that blows up at 0 is instead split into equal cells, each
    collapsed to one atom at its conditional mean carrying its exact mass;
    ``partial_mean(t)`` is E[theta; theta <= t].
    """
    if not h > 0 or cdf(h) <= 0:
        raise ZeroMassBelowCutoff(f"no prior mass in [0, {h}]")
    m = TRUNCATION_NODES
    if singular_at_zero:
        edges = np.linspace(0.0, h, m)
        weights = np.diff(cdf(edges))
        with np.errstate(invalid="ignore", divide="ignore"):
            atoms = np.diff(partial_mean(edges)) / weights
        mid = 0.5 * (edges[1:] + edges[:-1])
        # keep each atom inside its cell even when the mass ratio loses precision
        atoms = np.where(weights > 0, np.clip(atoms, edges[:-1], edges[1:]), mid)
    else:
        atoms = np.linspace(0.0, h, m)
        simpson = np.ones(m)
        simpson[1:-1:2] = 4.0
        simpson[2:-1:2] = 2.0
        weights = simpson * density(atoms)
    return PointMasses.from_arrays(atoms, weights)


@dataclass(frozen=True)
class Bounded:
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidPrior("Bounded class needs h > 0")


@dataclass(frozen=True)
class SubExponential:
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise InvalidPrior("SubExponential class needs s > 0")


PriorClassTag = Union[Bounded, SubExponential]


def sample_theta(prior: Prior, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return prior.draw(make_rng(seed), n)


def prior_moment(prior: Prior, p: int) -> float:
    if p < 0:
        raise ValueError("moment order must be >= 0")
    return float(prior.moment(p))


def truncate(prior: Prior, h: float) -> Prior:
    return prior.truncate(h)


def tail_prob(prior: Prior, t: float) -> float:
    """P(theta > t)."""
    return float(prior.tail_prob(t))


def prior_from_dict(spec: dict) -> Prior:
    """Parse a tagged record such as ``{"kind": "uniform", "lo": 0, "hi": 10}``."""
    kind = spec.get("kind")
    try:
        if kind in ("point_masses", "point-masses", "discrete"):
            return PointMasses(tuple(spec["atoms"]), tuple(spec["weights"]))
        if kind == "uniform":
            return Uniform(spec["lo"], spec["hi"])
        if kind == "gamma":
            return Gamma(spec["shape"], spec["rate"])
        if kind == "exponential":
            return Exponential(spec["scale"])
    except KeyError as exc:
        raise InvalidPrior(f"prior record {spec!r} is missing field {exc}") from None
    raise InvalidPrior(f"unknown prior kind {kind!r}")


def prior_class(prior: Prior) -> PriorClassTag:
    """Smallest natural class tag: bounded support, else subexponential."""
    if math.isfinite(prior.support_max):
        return Bounded(max(prior.support_max, 1e-12))
    if isinstance(prior, Exponential):
        return SubExponential(prior.scale)
    # Gamma(a, b) tails decay like exp(-b t) up to polynomial factors.
    return SubExponential(max(1.0, prior.shape) / prior.rate)
