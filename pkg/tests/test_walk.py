import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab import rng
from erwlab.environment import ENV_A, ENV_B, ENV_C
from erwlab.walk import (TrajectoryRecord, TruncatedRecord, WalkState, check_hitting_identity,
                         estimate_speed_direct, run_to_level, simulate_profiles, step,
                         write_profile_csv, write_trajectory_csv)

from conftest import environments


def test_hand_path_profile_and_identity():
    rec = TrajectoryRecord.from_path([0, 1, 2, 0, 1, 2, 3], 3, 2)
    assert rec.hitting_times[3] == 6
    # the jump 2 -> 0 is a type-1 jump over level 0 and a type-2 jump over level 1
    assert rec.profile.get(0, 2) == (1, 0)
    assert rec.profile.get(1, 2) == (0, 1)
    assert check_hitting_identity(rec) == (True, 0)


def test_hand_path_rejects_illegal_jump():
    with pytest.raises(ValueError):
        TrajectoryRecord.from_path([0, 2], 2, 2)


def test_kernel_matches_replayed_path():
    rec = run_to_level(ENV_A, 30, seed=4, record_path=True)
    again = TrajectoryRecord.from_path(rec.path, 30, ENV_A.L)
    assert again.hitting_times == rec.hitting_times
    assert again.profile.counts == rec.profile.counts


@settings(max_examples=25, deadline=None)
@given(environments(), st.integers(1, 25), st.integers(0, 2**32))
def test_identity_holds_for_random_environments(env, n, seed):
    rec = run_to_level(env, n, horizon=10**6, seed=seed)
    if not rec.truncated:
        assert check_hitting_identity(rec)[1] == 0


def test_truncation_is_reported():
    rec = run_to_level(ENV_C, 10**6, horizon=100, seed=1)
    assert rec.truncated and rec.steps == 100
    with pytest.raises(TruncatedRecord):
        check_hitting_identity(rec)


def test_first_jump_uses_first_cookie():
    s = rng.Stream(rng.derive_key(3, "first-step"))
    jumps = [step(ENV_A, WalkState(), s).position for _ in range(20_000)]
    freq = np.mean(np.array(jumps) == 1)
    assert abs(freq - 0.9) < 4 * np.sqrt(0.09 / 20_000)


def test_step_updates_local_time():
    s = rng.Stream(7)
    st_ = step(ENV_A, WalkState(), s)
    assert st_.local_time[0] == 1 and st_.local_time[st_.position] == 1 and st_.step_count == 1


def test_profiles_are_thread_invariant():
    a = simulate_profiles(ENV_A, 10, 3000, 9, threads=1)
    b = simulate_profiles(ENV_A, 10, 3000, 9, threads=3)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert np.all(a[2] == 0)


def test_speed_rejects_recurrent_environment():
    with pytest.raises(ValueError):
        estimate_speed_direct(ENV_C, 1000, 4, 1)


def test_speed_checkpoints():
    est = estimate_speed_direct(ENV_B, 10_000, 8, 2, checkpoints=[1000])
    assert list(est.checkpoints) == [1000, 10_000]
    assert 0 < est.estimate < 1


def test_csv_writers():
    rec = run_to_level(ENV_A, 5, seed=1, record_path=True)
    fh = io.StringIO()
    write_trajectory_csv(rec.path, fh)
    assert fh.getvalue().count("\n") == rec.steps + 2
    fh = io.StringIO()
    write_profile_csv(rec.profile, fh)
    assert fh.getvalue().splitlines()[0].startswith("level")
