import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import block_ratios, monotone_value_grid_dp, per_sample_erm_objective
from poisson_eb.errors import EmptySample, InvalidBounds
from poisson_eb.estimators import (SampleCounts, StepEstimator, erm_fit, erm_fit_clipped, erm_objective,
                                   mom_estimate, robbins_fit, robbins_table, tabulate)
from poisson_eb.oracle import falling_factorial, pochhammer, sample_channel
from poisson_eb.priors import PointMasses, make_rng

samples = st.lists(st.integers(0, 12), min_size=1, max_size=40)


def _shifted(counts, k):
    xs = np.arange(counts.x_max + 1)
    return [pochhammer(x + 1, k) * counts.N(x + k) for x in xs]


# -- tabulate ------------------------------------------------------------------

def test_tabulate_examples():
    c = tabulate([0, 1, 1])
    assert c.counts == {0: 1, 1: 2} and c.n == 3 and c.x_max == 1
    c = tabulate([5])
    assert c.counts == {5: 1} and c.n == 1 and c.x_max == 5


def test_tabulate_empty():
    with pytest.raises(EmptySample):
        tabulate([])
    with pytest.raises(EmptySample):
        SampleCounts(np.zeros(3, dtype=int))


@given(samples, st.randoms())
def test_tabulate_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    a, b = tabulate(xs), tabulate(ys)
    assert a == b and hash(a) == hash(b)
    assert sum(a.counts.values()) == a.n == len(xs)
    assert all(v >= 1 for v in a.counts.values())
    assert a.x_max == max(a.counts)


# -- MOM -----------------------------------------------------------------------

def test_mom_examples():
    assert mom_estimate(5, 2) == 20
    assert mom_estimate(1, 3) == 0


def test_mom_unbiased_theta4_k2():
    rng = make_rng(17)
    x = rng.poisson(4.0, size=10**6)
    v = mom_estimate(x, 2)
    assert abs(v.mean() - 16) <= 3 * v.std() / math.sqrt(v.size)


# -- Robbins -------------------------------------------------------------------

def test_robbins_examples():
    assert robbins_fit(tabulate([0, 1, 1]), 1) == {0: 2.0, 1: 0.0}
    for k in (1, 2, 3):
        assert robbins_fit(SampleCounts(np.array([10])), k) == {0: 0.0}


def test_robbins_consistency_point_mass():
    _, xs = sample_channel(PointMasses((3.0,), (1.0,)), 10**5, 4)
    est = robbins_fit(tabulate(xs), 2)
    for x in range(1, 7):
        assert est[x] == pytest.approx(9.0, rel=0.1)


def test_robbins_clip_and_domain():
    c = tabulate([0, 0, 2, 3, 3, 7])
    table = robbins_table(c, 1)
    assert np.isnan(table[1]) and np.isnan(table[4])
    assert set(robbins_fit(c, 1)) == {0, 2, 3, 7}
    clipped = robbins_fit(c, 1, clip=(0, 1.0))
    assert all(0 <= v <= 1.0 for v in clipped.values())


# -- ERM objective ---------------------------------------------------------------

def test_erm_objective_examples():
    c = tabulate([1, 1])
    assert erm_objective(c, 1, np.zeros(2)) == 0
    assert erm_objective(c, 1, StepEstimator([1.0, 1.0])) == -1


@settings(max_examples=100, deadline=None)
@given(samples, st.integers(1, 3), st.lists(st.floats(0, 50), min_size=1, max_size=14))
def test_erm_objective_per_sample_form(xs, k, raw):
    c = tabulate(xs)
    t = np.sort(np.asarray(raw))
    got = erm_objective(c, k, t)
    assert got == pytest.approx(per_sample_erm_objective(xs, k, _extend(t, c.x_max)), rel=1e-12, abs=1e-9)


def _extend(t, x_max):
    t = np.asarray(t, float)
    if t.size <= x_max:
        t = np.concatenate([t, np.full(x_max + 1 - t.size, t[-1])])
    return t[: x_max + 1]


# -- ERM fit -------------------------------------------------------------------

def test_erm_pooled_example():
    c = tabulate([1, 1])
    fit = erm_fit(c, 1)
    assert fit.values.tolist() == [1.0, 1.0]
    # dense value grid brute force agrees
    vals, _ = monotone_value_grid_dp(c.freq, _shifted(c, 1), np.linspace(0, 3, 3001))
    assert vals.tolist() == pytest.approx([1.0, 1.0], abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_erm_all_zeros(k):
    fit = erm_fit(SampleCounts(np.array([7])), k)
    assert fit.values.tolist() == [0.0]
    assert fit(5) == 0.0


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=8), st.integers(1, 2))
def test_erm_matches_value_grid_dp(xs, k):
    c = tabulate(xs)
    shifted = _shifted(c, k)
    grid = sorted(set(block_ratios(c.freq, shifted)) | set(np.linspace(0, 60, 601)))
    vals, best = monotone_value_grid_dp(c.freq, shifted, grid)
    fit = erm_fit(c, k)
    assert erm_objective(c, k, fit) <= best / c.n + 1e-12
    observed = c.freq > 0
    np.testing.assert_allclose(fit.values[observed], vals[observed], atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=1, max_size=30), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_erm_beats_random_monotone_rules(xs, k, seed):
    c = tabulate(xs)
    fit = erm_fit(c, k)
    obj = erm_objective(c, k, fit)
    rng = np.random.default_rng(seed)
    top = max(1.0, 2 * float(fit.values.max()))
    for t in np.sort(rng.uniform(0, top, size=(200, c.x_max + 1)), axis=1):
        assert obj <= erm_objective(c, k, t) + 1e-9


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=40), st.integers(1, 4))
def test_erm_invariants(xs, k):
    c = tabulate(xs)
    fit = erm_fit(c, k)
    v = fit.values
    assert np.all(v >= 0) and np.all(np.diff(v) >= 0)
    assert v.max() <= falling_factorial(c.x_max, k) + 1e-9
    # extension is constant at the last value
    assert fit(c.x_max + 5) == v[-1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=40), st.integers(1, 3))
def test_erm_agrees_with_robbins_on_unpooled_points(xs, k):
    c = tabulate(xs)
    fit = erm_fit(c, k).values
    rob = robbins_table(c, k)
    for x in range(c.x_max + 1):
        if c.freq[x] == 0:
            continue
        left = fit[x - 1] if x > 0 else -np.inf
        right = fit[x + 1] if x < c.x_max else np.inf
        if left < fit[x] < right:
            assert fit[x] == pytest.approx(rob[x], rel=1e-12)


def test_erm_permutation_invariant():
    rng = np.random.default_rng(0)
    xs = rng.poisson(3, size=200)
    a = erm_fit(tabulate(xs), 2).values
    b = erm_fit(tabulate(rng.permutation(xs)), 2).values
    assert a.tobytes() == b.tobytes()


# -- clipped ERM -----------------------------------------------------------------

def test_clipped_examples():
    c = tabulate([1, 1])
    assert erm_fit_clipped(c, 1, 0, 0.5).values.tolist() == [0.5, 0.5]
    assert erm_fit_clipped(c, 1, 0, 100).values.tolist() == erm_fit(c, 1).values.tolist()


@pytest.mark.parametrize("a,b", [(1, 1), (2, 1), (-1, 3)])
def test_clipped_invalid_bounds(a, b):
    with pytest.raises(InvalidBounds):
        erm_fit_clipped(tabulate([1]), 1, a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=1, max_size=10), st.integers(1, 2),
       st.floats(0, 5), st.floats(0.1, 20))
def test_clipped_is_constrained_minimiser(xs, k, a, width):
    b = a + width
    c = tabulate(xs)
    fit = erm_fit_clipped(c, k, a, b)
    assert np.all(fit.values >= a) and np.all(fit.values <= b)
    shifted = _shifted(c, k)
    grid = sorted({min(max(r, a), b) for r in block_ratios(c.freq, shifted)} | set(np.linspace(a, b, 201)))
    _, best = monotone_value_grid_dp(c.freq, shifted, grid)
    assert erm_objective(c, k, fit) <= best / c.n + 1e-12


# -- step estimator ----------------------------------------------------------------

def test_step_estimator_validation_and_breakpoints():
    with pytest.raises(ValueError):
        StepEstimator([1.0, 0.5])
    with pytest.raises(ValueError):
        StepEstimator([-1.0])
    s = StepEstimator([0.0, 0.0, 1.0, 1.0, 3.0])
    assert s.breakpoints == [(0, 0.0), (2, 1.0), (4, 3.0)]
    assert s(100) == 3.0
    assert s.clip(0.5, 2.0).values.tolist() == [0.5, 0.5, 1.0, 1.0, 2.0]
