import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab import rng
from erwlab.emigration import (EmigrationConfig, EmptyWindow, GWState, InvalidConfig,
                               SurvivalTable, TableOffspring, WOffspring, coupled_Z_W_run,
                               fit_survival_tail, fit_window, gw_step, survival_experiment,
                               w_offspring_for)
from erwlab.environment import ENV_A, ENV_CRITICAL
from erwlab.spectral import NotPositivelyRegular

THIRD = (1 / 3, 1 / 3)


def test_config_validation():
    off = WOffspring(THIRD)
    with pytest.raises(InvalidConfig):
        EmigrationConfig((0, 1), (1, 1), off)
    with pytest.raises(InvalidConfig):
        EmigrationConfig((2, 1), (1, 1), off)
    with pytest.raises(InvalidConfig):
        EmigrationConfig((1,), (1,), off)


def test_w_family_checks():
    with pytest.raises(ValueError):
        WOffspring((0.5, 0.5))
    with pytest.raises(NotPositivelyRegular):
        WOffspring((1.0, 0.0))
    assert w_offspring_for(ENV_A).rho == pytest.approx(THIRD)


def test_w_pgf_and_cancellation_free_complement():
    off = WOffspring(THIRD)
    assert np.allclose(off.pgf([0, 0]), [0.6, 0.0])
    t = np.array([1e-9, 3e-9])
    assert np.allclose(off.one_minus_pgf(t), 1 - off.pgf(1 - t), rtol=1e-6)
    rows = off.sample_rows(1, 200_000, 5)
    s = np.array([0.4, 0.7])
    emp = np.mean(np.prod(s ** rows, axis=1))
    assert emp == pytest.approx(off.pgf(s)[1], abs=0.005)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=2), st.integers(0, 2**32))
def test_step_absorbs_below_threshold_and_at_zero(u, seed):
    cfg = EmigrationConfig((2, 1), (2, 1), WOffspring(THIRD))
    s = rng.Stream(seed)
    nxt = gw_step(cfg, GWState(np.array(u)), s)
    if u[0] < 2 or u[1] < 1:
        assert not np.any(nxt.u_vec)
    assert not np.any(gw_step(cfg, GWState(np.zeros(2, dtype=int)), s).u_vec)


def test_step_with_deterministic_table():
    # each particle has one child of its own type
    off = TableOffspring([([[1, 0]], [1.0]), ([[0, 1]], [1.0])])
    cfg = EmigrationConfig((1, 2), (4, 5), off)
    st_ = gw_step(cfg, GWState(np.array([4, 5])), rng.Stream(1))
    assert st_.u_vec.tolist() == [3, 3]


def test_survival_table_properties():
    cfg = EmigrationConfig((1, 1), (2, 2), WOffspring(THIRD))
    a = survival_experiment(cfg, 40, 20_000, 3, threads=1)
    b = survival_experiment(cfg, 40, 20_000, 3, threads=3)
    assert np.array_equal(a.survivors, b.survivors) and np.array_equal(a.size_sum, b.size_sum)
    assert a.survivors[0] == 20_000
    assert np.all(np.diff(a.mu_hat) <= 0)


def test_emigrating_everything_kills_at_first_generation():
    cfg = EmigrationConfig((1, 1), (1, 1), WOffspring(THIRD))
    tab = survival_experiment(cfg, 10, 1000, 1)
    assert tab.survivors[0] == 1000 and np.all(tab.survivors[1:] == 0)
    with pytest.raises(EmptyWindow):
        fit_survival_tail(tab)


def _synthetic(exponent, R=10**8, horizon=60):
    n = np.arange(horizon + 1)
    mu = np.minimum(1.0, np.maximum(n, 1) ** -float(exponent))
    mu[0] = 1.0
    surv = np.round(mu * R).astype(np.int64)
    return SurvivalTable(n, surv, R, surv * n.astype(float), surv * n.astype(float) ** 2)


def test_tail_fit_recovers_exact_power_law():
    fit = fit_survival_tail(_synthetic(4))
    assert fit.exponent == pytest.approx(4.0, abs=1e-3)
    assert fit.preferred == "power"
    assert fit.cond_mean_slope == pytest.approx(1.0, abs=1e-6)


def test_fit_window_bounds():
    n0, n1 = fit_window(_synthetic(2, R=10**5))
    assert n0 == 2
    assert n1 == 22  # last n with at least 200 survivors: 1e5 / n^2 >= 200


def test_coupling_has_no_violations_and_is_thread_invariant():
    a = coupled_Z_W_run(ENV_CRITICAL, 100, 5000, 2, threads=1)
    b = coupled_Z_W_run(ENV_CRITICAL, 100, 5000, 2, threads=2)
    assert a.violations == 0 and a.as_dict() == b.as_dict()
    assert a.w_alive_at[1] > 0


def test_coupling_requires_longest_jump():
    from erwlab.environment import make_environment
    env = make_environment(2, {-1: "1/2", 1: "1/2"}, [{1: "3/4", -1: "1/4"}] * 3)
    with pytest.raises(InvalidConfig):
        coupled_Z_W_run(env, 10, 10, 1)


@pytest.mark.parametrize("off", [
    WOffspring(THIRD),
    WOffspring((0.0, 0.0, 1 / 3)),
    TableOffspring([([[0, 0], [2, 1]], [0.5, 0.5]), ([[1, 0], [0, 2]], [0.25, 0.75])]),
], ids=["w-two-type", "w-three-type", "table"])
def test_sampled_row_means_match_mean_matrix(off):
    m = off.mean_matrix()
    for i in range(off.L):
        rows = off.sample_rows(i, 200_000, 21 + i).astype(float)
        se = rows.std(axis=0, ddof=1) / np.sqrt(rows.shape[0])
        assert np.all(np.abs(rows.mean(axis=0) - m[i]) <= 3 * se + 1e-12)
