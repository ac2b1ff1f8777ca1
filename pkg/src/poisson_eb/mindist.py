"""g-modeling: fit a mixing distribution on a theta grid, then plug it into Tweedie.

The minimum-distance objectives are written in the separable form
``d(p || f) = phi(p) + sum_{x: p(x) > 0} psi(p(x), f(x))`` so that only the
observed counts enter, and are minimised over grid weights by fully
corrective Frank-Wolfe: a vertex step with exact line search, followed by
Newton polishing of the weights on the current support.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import NoProgress, SupportMismatch
from .estimators import SampleCounts, StepEstimator
from .oracle import bayes_estimate, log_poisson_pmf
from .priors import Bounded, PointMasses, PriorClassTag

DEFAULT_GRID_POINTS = 400
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 5000


class DivergenceKind(str, enum.Enum):
    KL = "kl"
    SQUARED_HELLINGER = "hellinger"
    CHI_SQUARED = "chi2"


def divergence(kind, p, q) -> float:
    """KL, squared Hellinger or chi-squared divergence between two pmfs on a common range."""
    kind = DivergenceKind(kind)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatch("p and q must live on the same range")
    if kind is DivergenceKind.SQUARED_HELLINGER:
        return float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))
    if np.any((p > 0) & (q <= 0)):
        raise SupportMismatch(f"{kind.value} needs q(x) > 0 wherever p(x) > 0")
    pos = p > 0
    if kind is DivergenceKind.KL:
        return float(np.sum(special.rel_entr(p[pos], q[pos])))
    live = q > 0
    return float(np.sum((p[live] - q[live]) ** 2 / q[live]))


def make_grid(x_max: int, prior_class: PriorClassTag, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Equispaced theta atoms on [0, h] for a bounded class, else on [0, x_max + 3 sqrt(x_max + 1)]."""
    if points < 2:
        raise ValueError("a grid needs at least two points")
    if isinstance(prior_class, Bounded):
        right = prior_class.h
    else:
        right = x_max + 3.0 * math.sqrt(x_max + 1.0)
    return np.linspace(0.0, right, points)


@dataclass(frozen=True, eq=False)
class GridMixingDistribution:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if atoms.shape != weights.shape or atoms.ndim != 1 or atoms.size == 0:
            raise ValueError("atoms and weights must be equally long 1-d arrays")
        if np.any(np.diff(atoms) <= 0) or not np.all(np.isfinite(atoms)) or atoms[0] < 0:
            raise ValueError("atoms must be finite, nonnegative, strictly increasing")
        if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def as_prior(self) -> PointMasses:
        return PointMasses.from_arrays(self.atoms, self.weights)

    def mean(self) -> float:
        return math.fsum(self.atoms * self.weights)

    def pmf(self, xs) -> np.ndarray:
        xs = np.asarray(xs)
        return np.exp(log_poisson_pmf(xs[:, None], self.atoms[None, :])) @ self.weights

    def to_csv(self, path, drop_zero=True):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["theta", "weight"])
            for a, w in zip(self.atoms, self.weights):
                if w > 0 or not drop_zero:
                    writer.writerow([repr(float(a)), repr(float(w))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["theta"]) for r in rows], [float(r["weight"]) for r in rows])


@dataclass
class FitReport:
    objective: float
    iterations: int
    converged: bool
    gap: float
    history: list = field(default_factory=list, repr=False)


# psi(a, b) and its first two b-derivatives for each divergence; phi(p) is a constant offset.
def _psi(kind, a, b):
    if kind is DivergenceKind.KL:
        return -a * np.log(b)
    if kind is DivergenceKind.SQUARED_HELLINGER:
        return -2.0 * np.sqrt(a * b)
    return a * a / b


def _dpsi(kind, a, b):
    if kind is DivergenceKind.KL:
        return -a / b
    if kind is DivergenceKind.SQUARED_HELLINGER:
        return -np.sqrt(a / b)
    return -(a / b) ** 2


def _d2psi(kind, a, b):
    if kind is DivergenceKind.KL:
        return a / (b * b)
    if kind is DivergenceKind.SQUARED_HELLINGER:
        return 0.5 * np.sqrt(a / b) / b
    return 2.0 * a * a / (b * b * b)


def _phi(kind, a):
    if kind is DivergenceKind.KL:
        return float(np.sum(special.entr(a)) * -1.0)
    if kind is DivergenceKind.SQUARED_HELLINGER:
        return 2.0
    return -1.0


def _objective(kind, p, f):
    with np.errstate(divide="ignore"):
        return _phi(kind, p) + float(np.sum(_psi(kind, p, f)))


def _line_search(kind, p, f, delta, gmax):
    """argmin over g in [0, gmax] of sum psi(p, f + g delta); convex, safeguarded Newton."""

    def slope(g):
        fg = f + g * delta
        if np.any(fg <= 0):
            return math.inf, math.inf
        return float(np.sum(_dpsi(kind, p, fg) * delta)), float(np.sum(_d2psi(kind, p, fg) * delta * delta))

    s0, _ = slope(0.0)
    if s0 >= 0:
        return 0.0
    s1, _ = slope(gmax)
    if s1 <= 0:
        return gmax
    lo, hi = 0.0, gmax
    g = 0.5 * gmax
    for _ in range(60):
        s, c = slope(g)
        if s > 0:
            hi = g
        else:
            lo = g
        if hi - lo <= 1e-15 * max(1.0, gmax) or s == 0:
            break
        step = g - s / c if c > 0 and math.isfinite(c) else math.nan
        g = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(s) <= 1e-15 * (abs(s0) + 1e-300) and c > 0:
            break
    return g


def _restricted_newton(kind, p, cols, lam, tol, max_steps=50):
    """Polish the weights of the active columns with Newton steps on the simplex face.

    Columns whose weight is driven to zero leave the active set (support reduction).
    """
    active = np.flatnonzero(lam > 0)
    for _ in range(max_steps):
        L = cols[:, active]
        f = L @ lam[active]
        g = _dpsi(kind, p, f) @ L
        if g.max() - g.min() <= 0.1 * tol:
            break
        H = (L.T * _d2psi(kind, p, f)) @ L
        H[np.diag_indices_from(H)] += 1e-12 * max(np.trace(H), 1e-300) / len(active)
        ones = np.ones(len(active))
        try:
            hg, h1 = np.linalg.solve(H, np.column_stack([g, ones])).T
        except np.linalg.LinAlgError:
            hg, h1 = np.linalg.lstsq(H, np.column_stack([g, ones]), rcond=None)[0].T
        d = -(hg - (ones @ hg) / (ones @ h1) * h1)
        if not np.all(np.isfinite(d)) or g @ d >= 0:
            break
        neg = d < 0
        ratios = np.full(len(active), math.inf)
        ratios[neg] = -lam[active][neg] / d[neg]
        amax = float(ratios.min())
        step = _line_search(kind, p, f, L @ d, min(amax, 4.0))
        if step <= 0:
            break
        lam[active] += step * d
        if step >= amax:
            lam[active[int(np.argmin(ratios))]] = 0.0
        lam[lam < 0] = 0.0
        lam /= lam.sum()
        active = np.flatnonzero(lam > 0)
    return lam


def _fit(counts: SampleCounts, grid, kind, tol, max_iter, record_history=True):
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if tol <= 0:
        raise ValueError("tol must be positive")
    obs = np.flatnonzero(counts.freq)
    p = counts.freq[obs] / counts.n
    lik = np.exp(log_poisson_pmf(obs[:, None], grid[None, :]))
    uniform = np.full(grid.size, 1.0 / grid.size)
    # The uniform start enters as one composite column; every later column is a grid atom.
    cols = (lik @ uniform)[:, None]
    atom_of = [-1]
    lam = np.ones(1)
    f = cols[:, 0].copy()
    obj = _objective(kind, p, f)
    if not math.isfinite(obj):
        raise NoProgress("objective is not finite at the uniform start; the grid misses the data")
    history = [obj] if record_history else []
    gap = math.inf
    it = 0
    while True:
        dpsi = _dpsi(kind, p, f)
        grad = dpsi @ lik
        s = int(np.argmin(grad))
        gap = float(lam @ (dpsi @ cols)) - float(grad[s])
        if gap <= tol or it >= max_iter:
            break
        it += 1
        if s in atom_of:
            j = atom_of.index(s)
        else:
            cols = np.column_stack([cols, lik[:, s]])
            atom_of.append(s)
            lam = np.append(lam, 0.0)
            j = lam.size - 1
        # vertex step with exact line search, then a corrective pass on the support
        gamma = _line_search(kind, p, f, cols[:, j] - f, 1.0)
        lam *= 1.0 - gamma
        lam[j] += gamma
        lam = _restricted_newton(kind, p, cols, lam, tol)
        f = cols @ lam
        obj = _objective(kind, p, f)
        if record_history:
            history.append(obj)
    w = lam[0] * uniform
    for j, atom in enumerate(atom_of[1:], start=1):
        w[atom] += lam[j]
    fitted = GridMixingDistribution(grid, w / w.sum())
    return fitted, FitReport(obj, it, gap <= tol, gap, history)


def npmle_fit(counts: SampleCounts, grid, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Grid NPMLE: maximise ``(1/n) sum_x N(x) log f_Q(x)`` over grid weights.

    Stops once ``max_j (1/n) sum_x N(x) p(x|theta_j) / f_Q(x) - 1 <= tol``.
    The report's objective is the KL form ``sum p log p - avg log-likelihood``;
    use :func:`average_log_likelihood` for the likelihood itself.
    """
    return _fit(counts, grid, DivergenceKind.KL, tol, max_iter)


def mindist_fit(counts: SampleCounts, grid, kind=DivergenceKind.KL, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER):
    """Minimise ``d(p_emp || f_Q)`` over grid weights for the chosen divergence."""
    return _fit(counts, grid, DivergenceKind(kind), tol, max_iter)


def average_log_likelihood(counts: SampleCounts, fitted: GridMixingDistribution) -> float:
    obs = np.flatnonzero(counts.freq)
    with np.errstate(divide="ignore"):
        return float(counts.freq[obs] @ np.log(fitted.pmf(obs)) / counts.n)


def npmle_em(counts: SampleCounts, grid, max_iter: int = 20000, tol: float = 1e-10):
    """Plain EM for the grid NPMLE; slow but independent of the Frank-Wolfe path."""
    grid = np.asarray(grid, dtype=float)
    obs = np.flatnonzero(counts.freq)
    p = counts.freq[obs] / counts.n
    lik = np.exp(log_poisson_pmf(obs[:, None], grid[None, :]))
    w = np.full(grid.size, 1.0 / grid.size)
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = lik @ w
        ratio = (p / f) @ lik
        gap = float(ratio.max() - 1.0)
        if gap <= tol:
            break
        w = w * ratio
        w /= w.sum()
    fitted = GridMixingDistribution(grid, w)
    return fitted, FitReport(_objective(DivergenceKind.KL, p, lik @ w), it, gap <= tol, gap)


def plugin_bayes(fitted: GridMixingDistribution, k: int, x_max: int) -> StepEstimator:
    """Tweedie rule ``(x+1)_k f(x+k) / f(x)`` under the fitted mixture on 0..x_max."""
    values = bayes_estimate(fitted.as_prior(), k, np.arange(x_max + 1))
    # absorbs last-ulp wobble on flat stretches; the exact rule is nondecreasing
    return StepEstimator(np.maximum.accumulate(values))


def naive_plugin(fitted: GridMixingDistribution, k: int, x_max: int) -> StepEstimator:
    """The biased rule ``(E[theta | x])^k`` under the fitted mixture."""
    return StepEstimator(plugin_bayes(fitted, 1, x_max).values ** k)
