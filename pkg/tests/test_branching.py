from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab import rng
from erwlab.branching import (A_pgf, DivergenceSuspected, conditional_mean_z1, estimate_stationary,
                              eta_pgf, eta_pmf, expected_A, expected_A_M_minus_1, run_chain,
                              sample_A, sample_eta, speed_from_stationary, states_up_to,
                              support_set, z_paths, z_step)
from erwlab.environment import ENV_A, ENV_B, ENV_C, make_environment
from erwlab.stats import align_counts, chi_square_two_sample

from conftest import environments


def _stream(*path):
    return rng.Stream(rng.derive_key(77, *path))


def one_type_A_pmf(p, m, upto):
    """P(A(m) = a) for Bernoulli(p_j) trials: exactly m successes among the
    first a+m trials, then a success.  ``p`` extends with its last entry."""
    def pj(j):
        return p[j] if j < len(p) else p[-1]
    out = []
    for a in range(upto):
        dist = np.zeros(m + 2)
        dist[0] = 1.0
        for j in range(a + m):
            q = pj(j)
            dist[1:] = dist[1:] * (1 - q) + dist[:-1] * q
            dist[0] *= 1 - q
        out.append(dist[m] * pj(a + m))
    return np.array(out)


@pytest.mark.parametrize("m", [0, 1, 2, 4])
def test_one_type_pgf_matches_direct_enumeration(m):
    env = make_environment(1, {1: "1/2", -1: "1/2"},
                           [{1: "3/4", -1: "1/4"}, {1: "2/3", -1: "1/3"}, {1: "9/10", -1: "1/10"}])
    pmf = one_type_A_pmf([0.75, 2 / 3, 0.9, 0.5], m, 400)
    for t in (0.0, 0.3, 0.7, 0.95):
        assert A_pgf(env, m, [t]) == pytest.approx(float(np.sum(pmf * t ** np.arange(400))), abs=1e-12)


def test_env_a_mean_of_A_at_last_cookie():
    assert expected_A_M_minus_1(ENV_A) == (Fraction(2, 5), Fraction(1, 10))
    assert expected_A(ENV_A, ENV_A.M - 1) == (Fraction(2, 5), Fraction(1, 10))


@settings(max_examples=40)
@given(environments())
def test_closed_form_mean_agrees_with_success_count_recursion(env):
    assert expected_A_M_minus_1(env) == expected_A(env, env.M - 1)


@settings(max_examples=40)
@given(environments(), st.integers(0, 5))
def test_pgf_at_one_and_derivative(env, m):
    L = env.L
    assert A_pgf(env, m, [Fraction(1)] * L) == 1
    h = 1e-6
    ea = expected_A(env, m)
    for l in range(L):
        t = [1.0] * L
        t[l] = 1 - h
        slope = (1 - A_pgf(env, m, t)) / h
        assert slope == pytest.approx(float(ea[l]), rel=1e-4, abs=1e-5)


def test_eta_pmf_and_pgf():
    assert eta_pmf(ENV_A, (0, 0)) == Fraction(3, 5)
    tot = sum(eta_pmf(ENV_A, (i, j)) for i in range(60) for j in range(60) if i + j < 60)
    assert float(tot) == pytest.approx(1.0, abs=1e-12)
    s = (Fraction(1, 2), Fraction(1, 4))
    series = sum(eta_pmf(ENV_A, (i, j)) * s[0] ** i * s[1] ** j
                 for i in range(60) for j in range(60) if i + j < 60)
    assert float(series) == pytest.approx(float(eta_pgf(ENV_A, s)), abs=1e-12)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_decomposition_matches_direct_sampling(m):
    a = sample_A(ENV_A, m, _stream("direct", m), 100_000, method="direct")
    b = sample_A(ENV_A, m, _stream("decomp", m), 100_000, method="decomposition")
    _, ca, cb = align_counts(a, b)
    assert chi_square_two_sample(ca, cb)[0] > 1e-4
    assert np.allclose(a.mean(axis=0), [float(x) for x in expected_A(ENV_A, m)], atol=0.02)


def test_sample_eta_mean():
    e = sample_eta(ENV_A, _stream("eta"), 200_000)
    assert np.allclose(e.mean(axis=0), [1 / 3, 1 / 3], atol=0.01)


def test_z_step_mean_matches_conditional_mean():
    s = _stream("zstep")
    k = (2, 1)
    x = np.array([z_step(ENV_A, k, s) for _ in range(20_000)])
    want = [float(v) for v in conditional_mean_z1(ENV_A, k)]
    se = x.std(axis=0) / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - want) < 4 * se)


def test_support_set_bounds():
    env = make_environment(3, {-3: "1/4", 1: "3/4"},
                           [{1: "8/10", -1: "1/10", -2: "1/10"}, {1: "9/10", -1: "1/10"}])
    sup = support_set(env)
    assert sup.L_prime == 3 and sup.bounds == (None, None, None)
    env2 = make_environment(3, {-1: "1/2", 1: "1/2"},
                            [{1: "8/10", -3: "1/10", -1: "1/10"}, {1: "9/10", -2: "1/10"}])
    sup2 = support_set(env2)
    assert sup2.L_prime == 1 and sup2.d == (1, 1, 1) and sup2.bounds == (None, 2, 1)


@settings(max_examples=15, deadline=None)
@given(environments(), st.integers(0, 2**32))
def test_chain_stays_in_support(env, seed):
    sup = support_set(env)
    paths = z_paths(env, env.L + 6, 200, seed)
    assert np.all(paths[:, 0] == 0)
    for z in paths[:, env.L:].reshape(-1, env.L):
        assert sup.contains(tuple(z))


def test_stationary_summary_basic():
    st_ = estimate_stationary(ENV_A, 200_000, 3)
    masses = [v[0] for v in st_.histogram.values()]
    assert sum(masses) == pytest.approx(1.0)
    assert st_.speed_formula_value == pytest.approx(speed_from_stationary(st_.mean_z))
    assert st_.running_mean[-1][0] == 200_000


def test_recurrent_chain_is_refused():
    with pytest.raises(DivergenceSuspected):
        estimate_stationary(ENV_C, 1000, 1)


def test_run_chain_cap():
    with pytest.raises(DivergenceSuspected):
        run_chain(ENV_A, 1000, 1, z0=(50, 50), cap=10)


def test_states_up_to():
    assert states_up_to(2, 1) == [(0, 0), (0, 1), (1, 0)]
    assert len(states_up_to(3, 2)) == 10


def test_speed_formula():
    assert speed_from_stationary([0, 0]) == 1.0
    assert speed_from_stationary([1, 2]) == pytest.approx(1 / 5)


@pytest.mark.parametrize("k", [(0, 0), (1, 0), (0, 1), (2, 3), (5, 0), (7, 7)])
def test_extra_cookie_shrinks_conditional_mean(k):
    # ENV-A is ENV-B plus one more drift-positive cookie
    a = conditional_mean_z1(ENV_A, k)
    b = conditional_mean_z1(ENV_B, k)
    assert all(x <= y for x, y in zip(a, b))


def test_stationary_means_ordered_by_cookie_count():
    a = estimate_stationary(ENV_A, 10**6, 5)
    b = estimate_stationary(ENV_B, 10**6, 6)
    assert all(x < y for x, y in zip(a.mean_z, b.mean_z))
