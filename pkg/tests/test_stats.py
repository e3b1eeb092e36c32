import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab import stats

floats = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=0, max_size=30)


@given(floats, floats, floats)
def test_estimate_merge_is_associative(a, b, c):
    ea, eb, ec = (stats.Estimate.from_samples(x) for x in (a, b, c))
    left = ea.merge(eb).merge(ec)
    right = ea.merge(eb.merge(ec))
    assert left.count == right.count == len(a) + len(b) + len(c)
    assert math.isclose(left.total, right.total, rel_tol=1e-12, abs_tol=1e-8)
    assert math.isclose(left.total_sq, right.total_sq, rel_tol=1e-12, abs_tol=1e-6)


@given(floats.filter(lambda x: len(x) >= 2))
def test_estimate_matches_numpy(x):
    e = stats.Estimate.from_samples(x)
    assert math.isclose(e.mean, np.mean(x), rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(e.var, np.var(x, ddof=1), rel_tol=1e-6, abs_tol=1e-6)


def test_batch_means_on_iid_matches_naive_se():
    x = np.random.default_rng(0).normal(size=100_000)
    m, se = stats.batch_means(x)
    assert abs(m) < 4 * se
    assert 0.8 < se / (x.std() / math.sqrt(x.size)) < 1.25


def test_batch_means_inflates_for_correlated_chain():
    r = np.random.default_rng(1)
    x = np.empty(100_000)
    x[0] = 0
    e = r.normal(size=x.size)
    for t in range(1, x.size):
        x[t] = 0.9 * x[t - 1] + e[t]
    _, se = stats.batch_means(x)
    assert se > 3 * x.std() / math.sqrt(x.size)


def test_chi_square_identical_and_different():
    a = [1000] * 5
    p, stat, df = stats.chi_square_two_sample(a, list(a))
    assert p == pytest.approx(1.0) and stat == 0 and df == 4
    b = [2000, 500, 1000, 1000, 500]
    assert stats.chi_square_two_sample(a, b)[0] < 1e-10


def test_pool_cells_merges_sparse_tail():
    a, b = stats.pool_cells([100, 50, 1, 1], [90, 60, 2, 0])
    assert np.all(a + b >= 10) and a.sum() == 152 and b.sum() == 152 and a.size == 2


def test_too_few_cells():
    with pytest.raises(stats.TooFewCells):
        stats.chi_square_two_sample([], [])
    assert stats.chi_square_two_sample([10], [10])[2] == 0


def test_loglog_slope_recovers_power_law():
    x = np.arange(1, 50, dtype=float)
    fit = stats.loglog_slope(x, 3.0 * x ** -2.5)
    assert fit.slope == pytest.approx(-2.5, abs=1e-12)


def test_loglog_rejects_nonpositive():
    with pytest.raises(stats.NonpositiveData):
        stats.loglog_slope([1, 2, 3], [1, 0, 1])


@pytest.mark.parametrize("alpha", [0.8, 1.5, 2.5])
def test_survival_tail_index_on_pareto(alpha):
    u = np.random.default_rng(2).random(2_000_000)
    x = u ** (-1 / alpha)
    a, se, thr = stats.survival_tail_index(x)
    assert len(thr) >= 2
    assert abs(a - alpha) < 0.01 * alpha + 4 * se


def test_chunk_bounds_cover_range():
    b = [tuple(map(int, x)) for x in stats.chunk_bounds(10, 3)]
    assert b == [(0, 3), (3, 6), (6, 9), (9, 10)]


@settings(max_examples=20)
@given(st.integers(1, 6))
def test_parallel_map_keeps_order(threads):
    assert stats.parallel_map(lambda v: v * v, list(range(20)), threads) == [v * v for v in range(20)]
