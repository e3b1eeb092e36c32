"""Worked examples and independent oracles for individual operations."""

from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as sps

from erwlab import rng
from erwlab.branching import (conditional_mean_z1, estimate_stationary, expected_A, support_set,
                              z_paths)
from erwlab.emigration import (EmigrationConfig, GWState, WOffspring, fit_survival_tail, gw_step,
                               survival_experiment)
from erwlab.environment import ENV_A, CookieEnvironment, make_environment, rho_vector
from erwlab.stats import align_counts, chi_square_two_sample, loglog_slope
from erwlab.walk import TrajectoryRecord, check_hitting_identity, estimate_speed_direct


def test_hand_path_with_negative_levels():
    rec = TrajectoryRecord.from_path([0, 1, -1, 0, 1, 2], 2, 2)
    assert rec.hitting_times[2] == 5
    assert rec.profile.get(0, 2)[1] == 1
    assert rec.profile.get(-1, 2)[0] == 1
    assert check_hitting_identity(rec) == (True, 0)


def test_rho_with_only_long_jumps():
    env = make_environment(2, {-2: "1/3", 1: "2/3"}, [{1: "9/10", -1: "1/10"}])
    assert rho_vector(env) == (0, Fraction(1, 2))


def test_conditional_mean_large_state():
    assert conditional_mean_z1(ENV_A, (2, 0)) == (Fraction(2, 5), Fraction(1, 10))


def test_expected_A_single_fair_cookie():
    env = CookieEnvironment(1, 1, ({1: "1/2", -1: "1/2"},), {1: "1/2", -1: "1/2"})
    assert expected_A(env, 0) == (1,)


def test_support_with_two_long_jump_cookies():
    env = make_environment(2, {-1: "1/2", 1: "1/2"},
                           [{1: "9/10", -2: "1/10"}, {1: "9/10", -2: "1/10"}, {1: "9/10", -1: "1/10"}])
    sup = support_set(env)
    assert sup.L_prime == 1 and sup.bounds == (None, 2)


def _one_type_chain(q_success, nu_success, steps, seed):
    """Z_{n+1} = failures before the (Z_n + 1)-th success, trial by trial."""
    r = np.random.default_rng(seed)
    z, out = 0, np.empty(steps, dtype=np.int64)
    for t in range(steps):
        succ = fail = trial = 0
        while succ < z + 1:
            p = q_success[trial] if trial < len(q_success) else nu_success
            if r.random() < p:
                succ += 1
            else:
                fail += 1
            trial += 1
        z = fail
        out[t] = z
    return out


def test_one_type_stationary_mean_against_trialwise_chain():
    env = make_environment(1, {-1: "1/2", 1: "1/2"}, [{1: "9/10", -1: "1/10"}] * 3)
    oracle = _one_type_chain([0.9] * 3, 0.5, 300_000, 1)[30_000:]
    st = estimate_stationary(env, 1_000_000, 2)
    from erwlab.stats import batch_means
    m_o, se_o = batch_means(oracle.astype(float))
    assert abs(st.mean_z[0] - m_o) < 4 * np.hypot(st.se[0], se_o)


def test_single_parent_step_is_one_offspring_row():
    off = WOffspring((1 / 3, 1 / 3))
    cfg = EmigrationConfig((1, 1), (2, 1), off)
    s = rng.Stream(rng.derive_key(3, "single-parent"))
    x = np.array([gw_step(cfg, GWState(np.array([2, 1])), s).u_vec for _ in range(40_000)])
    rows = off.sample_rows(0, 40_000, 4)
    _, ca, cb = align_counts(x, rows)
    assert chi_square_two_sample(ca, cb)[0] > 1e-3


def test_subcritical_control_prefers_geometric_decay():
    off = WOffspring((0.25, 0.25), check_critical=False)
    cfg = EmigrationConfig((1, 1), (3, 3), off)
    tab = survival_experiment(cfg, 60, 1_000_000, 5)
    fit = fit_survival_tail(tab)
    assert fit.preferred == "geometric"


def test_speed_below_one_for_nearly_deterministic_cookies():
    env = make_environment(2, {-2: "1/5", -1: "1/5", 1: "3/5"}, [{1: "999/1000", -1: "1/1000"}] * 3)
    est = estimate_speed_direct(env, 20_000, 8, 1)
    assert 0.9 < est.estimate < 1


def test_loglog_slope_with_noise():
    x = np.geomspace(1, 1000, 40)
    y = 2.0 * x ** -4 * (1 + 0.01 * np.random.default_rng(6).standard_normal(x.size))
    fit = loglog_slope(x, y)
    assert abs(fit.slope + 4) <= fit.ci
    assert loglog_slope(x, x ** 2).slope == pytest.approx(2.0, abs=1e-12)


def test_chi_square_calibration_on_equal_laws():
    ps = []
    for rep in range(60):
        a = z_paths(ENV_A, 3, 20_000, 1000 + rep, experiment="cal-a").reshape(20_000, -1)
        b = z_paths(ENV_A, 3, 20_000, 1000 + rep, experiment="cal-b").reshape(20_000, -1)
        _, ca, cb = align_counts(a, b)
        ps.append(chi_square_two_sample(ca, cb)[0])
    assert sps.kstest(ps, "uniform").pvalue > 0.01
