"""Trajectories of the (L,1) excited random walk.

Backward-jump bookkeeping: a jump from ``x`` down to ``y = x - d`` crosses the
levels ``i = y, ..., x-1`` and counts as a type ``i - y + 1`` jump of level
``i`` in the profile ``V``.  Every level below the target is recorded,
negative ones included, so that the hitting-time identity

    T_n = n + 2 * sum_i V[i, 1] + sum_i sum_{l >= 2} V[i, l]

holds exactly on every path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng
from .environment import CookieEnvironment, compute_delta
from .stats import chunk_bounds, parallel_map

DEFAULT_HORIZON = 10**8
_CHUNK = 64


class HorizonExceeded(RuntimeError):
    pass


class TruncatedRecord(ValueError):
    pass


# --- kernels ----------------------------------------------------------------


@nb.njit(cache=True)
def _grow1(arr, off, idx, pad):
    """Make ``idx`` addressable in a two-sided array, doubling on demand."""
    n = arr.shape[0]
    j = idx + off
    if 0 <= j < n:
        return arr, off
    extra = max(n, pad)
    new = np.zeros(n + extra, dtype=arr.dtype)
    if j < 0:
        new[extra:] = arr
        return new, off + extra
    new[:n] = arr
    return new, off


@nb.njit(cache=True)
def _grow2(arr, off, idx, pad):
    n = arr.shape[0]
    j = idx + off
    if 0 <= j < n:
        return arr, off
    extra = max(n, pad)
    new = np.zeros((n + extra, arr.shape[1]), dtype=arr.dtype)
    if j < 0:
        new[extra:, :] = arr
        return new, off + extra
    new[:n, :] = arr
    return new, off


@nb.njit(cache=True, inline="always")
def _draw_jump(cdf, L, M, visits, st):
    row = visits - 1 if visits <= M else M
    k = rng.categorical_nb(cdf[row], rng.uniform_nb(st))
    return 1 if k == L else -(k + 1)


@nb.njit(cache=True, nogil=True)
def _run_to_level_kernel(cdf, L, M, key, n, horizon, record_path):
    """Walk from 0 until level ``n`` or ``horizon`` steps.

    Returns ``(hit, V, v_off, lo, hi, steps, pos, path)`` where ``hit[k]`` is
    ``T_k`` (``-1`` if unreached), ``V[i + v_off]`` the profile row of level
    ``i`` and ``[lo, hi]`` the range of levels touched."""
    st = rng.new_state_nb(key)
    visits = np.zeros(4 * n + 64, dtype=np.int32)
    voff = 2 * n + 32
    V = np.zeros((visits.shape[0], L), dtype=np.int64)
    poff = voff
    hit = np.full(n + 1, -1, dtype=np.int64)
    hit[0] = 0
    path = np.zeros(horizon + 1 if record_path else 1, dtype=np.int64)
    pos = 0
    visits[pos + voff] = 1
    lo = 0
    hi = -1
    t = 0
    while pos < n and t < horizon:
        jump = _draw_jump(cdf, L, M, visits[pos + voff], st)
        t += 1
        if jump == 1:
            pos += 1
            if pos > 0 and hit[pos] < 0:
                hit[pos] = t
        else:
            y = pos + jump
            V, poff = _grow2(V, poff, y, 64)
            for i in range(y, pos):
                V[i + poff, i - y] += 1
            if y < lo:
                lo = y
            if pos - 1 > hi:
                hi = pos - 1
            pos = y
        visits, voff = _grow1(visits, voff, pos, 64)
        visits[pos + voff] += 1
        if record_path:
            path[t] = pos
    return hit, V, poff, lo, hi, t, pos, path[: t + 1]


@nb.njit(cache=True)
def _identity_residual(hit_n, n, V, off, lo, hi):
    total = n
    for i in range(lo, hi + 1):
        total += 2 * V[i + off, 0]
        for l in range(1, V.shape[1]):
            total += V[i + off, l]
    return hit_n - total


@nb.njit(cache=True, nogil=True)
def _profiles_kernel(cdf, L, M, base_key, r0, r1, n, horizon):
    R = r1 - r0
    T = np.empty(R, dtype=np.int64)
    prof = np.zeros((R, n, L), dtype=np.int64)
    resid = np.zeros(R, dtype=np.int64)
    trunc = np.zeros(R, dtype=np.bool_)
    for r in range(R):
        key = rng.child_key_nb(base_key, r0 + r)
        hit, V, off, lo, hi, steps, pos, _ = _run_to_level_kernel(cdf, L, M, key, n, horizon, False)
        T[r] = hit[n]
        if hit[n] < 0:
            trunc[r] = True
            continue
        for i in range(n):
            if lo <= i <= hi:
                for l in range(L):
                    prof[r, i, l] = V[i + off, l]
        resid[r] = _identity_residual(hit[n], n, V, off, lo, hi)
    return T, prof, resid, trunc


@nb.njit(cache=True, nogil=True)
def _speed_kernel(cdf, L, M, base_key, r0, r1, checkpoints):
    """Positions and time spent on negative sites at each checkpoint."""
    R = r1 - r0
    C = checkpoints.shape[0]
    n_steps = checkpoints[C - 1]
    X = np.zeros((R, C), dtype=np.int64)
    NEG = np.zeros((R, C), dtype=np.int64)
    for r in range(R):
        st = rng.new_state_nb(rng.child_key_nb(base_key, r0 + r))
        visits = np.zeros(n_steps + 1025, dtype=np.int32)
        voff = 1024
        pos = 0
        visits[voff] = 1
        neg = 0
        c = 0
        for t in range(1, n_steps + 1):
            pos += _draw_jump(cdf, L, M, visits[pos + voff], st)
            visits, voff = _grow1(visits, voff, pos, 1024)
            visits[pos + voff] += 1
            if pos < 0:
                neg += 1
            if t == checkpoints[c]:
                X[r, c] = pos
                NEG[r, c] = neg
                c += 1
    return X, NEG


# --- Python API -------------------------------------------------------------


@dataclass
class WalkState:
    position: int = 0
    step_count: int = 0
    local_time: dict = field(default_factory=lambda: {0: 1})


def step(env: CookieEnvironment, state: WalkState, stream: rng.Stream) -> WalkState:
    """One jump; the law is picked by the visit count of the current site."""
    visits = state.local_time.get(state.position, 0)
    row = visits - 1 if visits <= env.M else env.M
    k = int(np.searchsorted(env.trial_cdf[row], stream.random(1)[0], side="right"))
    k = min(k, env.L)
    jump = 1 if k == env.L else -(k + 1)
    pos = state.position + jump
    lt = dict(state.local_time)
    lt[pos] = lt.get(pos, 0) + 1
    return WalkState(pos, state.step_count + 1, lt)


@dataclass
class BackwardJumpProfile:
    n: int
    counts: dict  # level -> tuple of L counts; untouched levels are omitted

    def get(self, level, L):
        return self.counts.get(level, (0,) * L)


@dataclass
class TrajectoryRecord:
    hitting_times: dict
    profile: BackwardJumpProfile
    final_position: int
    truncated: bool
    steps: int
    path: np.ndarray | None = None

    @classmethod
    def from_path(cls, path, n, L) -> "TrajectoryRecord":
        """Build a record from an explicit path starting at 0 (for hand checks)."""
        path = [int(x) for x in path]
        hits, counts = {0: 0}, {}
        for t in range(1, len(path)):
            x, y = path[t - 1], path[t]
            d = y - x
            if d != 1 and not (-L <= d <= -1):
                raise ValueError(f"illegal jump {d} at step {t}")
            if d == 1:
                if y > 0:
                    hits.setdefault(y, t)
            else:
                for i in range(y, x):
                    row = list(counts.get(i, (0,) * L))
                    row[i - y] += 1
                    counts[i] = tuple(row)
            if y == n:
                path = path[: t + 1]
                break
        reached = n in hits
        return cls(hits, BackwardJumpProfile(n, counts), path[-1], not reached,
                   len(path) - 1, np.array(path))


def run_to_level(env: CookieEnvironment, n: int, horizon: int = DEFAULT_HORIZON,
                 seed: int = 0, replica: int = 0, record_path: bool = False,
                 experiment: str = "walk") -> TrajectoryRecord:
    """Simulate until the walk first hits ``n`` (or ``horizon`` steps)."""
    if n < 1:
        raise ValueError("target level must be >= 1")
    key = np.uint64(rng.derive_key(seed, experiment, replica))
    hit, V, off, lo, hi, steps, pos, path = _run_to_level_kernel(
        env.trial_cdf, env.L, env.M, key, n, horizon, record_path)
    hits = {k: int(hit[k]) for k in range(n + 1) if hit[k] >= 0}
    counts = {}
    for i in range(lo, hi + 1):
        row = tuple(int(c) for c in V[i + off])
        if any(row):
            counts[i] = row
    return TrajectoryRecord(hits, BackwardJumpProfile(n, counts), int(pos), bool(hit[n] < 0),
                            int(steps), path if record_path else None)


def check_hitting_identity(record: TrajectoryRecord):
    """``(ok, residual)`` for ``T_n = n + 2 sum V_1 + sum_{l>=2} V_l``."""
    n = record.profile.n
    if record.truncated or n not in record.hitting_times:
        raise TruncatedRecord(f"level {n} not reached")
    total = n
    for row in record.profile.counts.values():
        total += 2 * row[0] + sum(row[1:])
    resid = record.hitting_times[n] - total
    return resid == 0, resid


def simulate_profiles(env: CookieEnvironment, n: int, replicas: int, seed: int,
                      horizon: int = DEFAULT_HORIZON, threads: int = 1,
                      experiment: str = "profiles"):
    """Batch of walks to level ``n``.

    Returns ``(T, profile, residual, truncated)``; ``profile[r, i]`` is the
    type vector of level ``i`` for ``0 <= i < n``."""
    base = np.uint64(rng.derive_key(seed, experiment))
    cdf = env.trial_cdf

    def work(b):
        return _profiles_kernel(cdf, env.L, env.M, base, b[0], b[1], n, horizon)

    parts = parallel_map(work, chunk_bounds(replicas, max(_CHUNK, replicas // 64)), threads)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))


@dataclass
class SpeedEstimate:
    checkpoints: list
    mean: list
    se: list
    negative_time_fraction: list
    replicas: int

    @property
    def estimate(self):
        return self.mean[-1]

    @property
    def stderr(self):
        return self.se[-1]

    def as_dict(self):
        return {"checkpoints": self.checkpoints, "mean": self.mean, "se": self.se,
                "negative_time_fraction": self.negative_time_fraction,
                "replicas": self.replicas}


def estimate_speed_direct(env: CookieEnvironment, n_steps: int, replicas: int, seed: int,
                          threads: int = 1, checkpoints=None,
                          experiment: str = "speed") -> SpeedEstimate:
    """Mean and SE of ``X_n / n`` over independent replicas.

    ``checkpoints`` (ascending, last one is ``n_steps``) are read off the same
    trajectories, which is how finite-``n`` drift near the critical point is
    reported."""
    if compute_delta(env) <= 1:
        raise ValueError("direct speed estimation needs delta > 1")
    cps = sorted(set(checkpoints or []) | {n_steps})
    cps = np.array([c for c in cps if 0 < c <= n_steps], dtype=np.int64)
    base = np.uint64(rng.derive_key(seed, experiment))
    cdf = env.trial_cdf

    def work(b):
        return _speed_kernel(cdf, env.L, env.M, base, b[0], b[1], cps)

    parts = parallel_map(work, chunk_bounds(replicas, 4), threads)
    X = np.concatenate([p[0] for p in parts]).astype(np.float64)
    NEG = np.concatenate([p[1] for p in parts]).astype(np.float64)
    v = X / cps
    means = v.mean(axis=0)
    ses = v.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(means)
    negfrac = (NEG / cps).mean(axis=0)
    return SpeedEstimate([int(c) for c in cps], [float(x) for x in means],
                         [float(x) for x in ses], [float(x) for x in negfrac], replicas)


def write_trajectory_csv(path_positions, fh):
    w = csv.writer(fh)
    w.writerow(["step", "position"])
    for t, x in enumerate(path_positions):
        w.writerow([t, int(x)])


def write_profile_csv(profile: BackwardJumpProfile, fh):
    w = csv.writer(fh)
    w.writerow(["level", "ell", "count"])
    for level in sorted(profile.counts):
        for l, c in enumerate(profile.counts[level], start=1):
            w.writerow([level, l, c])
