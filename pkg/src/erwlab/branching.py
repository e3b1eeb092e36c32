"""Failure counts, the geometric increment and the backward-jump chain ``Z``.

Trial ``j`` (1-based) is drawn from cookie ``j`` while ``j <= M`` and from
``nu`` afterwards; a ``+1`` outcome is a success and ``-l`` an ``l``-th type
failure.  ``A(m)`` counts failures per type before the ``(m+1)``-th success,
and the chain moves by

    Z_{n+1} = A(|Z_n|) + (Z_{n,2}, ..., Z_{n,L}, 0)

with a fresh ``A`` each step.  Past the cookies every success is preceded by
an independent multivariate geometric ``eta`` with pgf
``1 / (1 + sum_l rho_l (1 - s_l))``, so for ``m >= M-1``
``A(m) = A(M-1) + eta_1 + ... + eta_{m-M+1}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba as nb
import numpy as np

from . import rng
from .environment import CookieEnvironment, compute_delta, rho_vector
from .stats import align_counts, batch_means, survival_tail_index, chi_square_two_sample, loglog_slope

DIRECT = 0
DECOMPOSITION = 1


class DivergenceSuspected(RuntimeError):
    pass


@dataclass(frozen=True)
class BranchingTables:
    """Float tables consumed by the kernels."""

    cdf: np.ndarray        # (M+1, L+1) trial cdf, last row nu
    eta_cdf: np.ndarray    # (L,) cdf of the failure type given a nu-failure
    log_fail: float        # log(1 - nu(1))
    L: int
    M: int

    @classmethod
    def of(cls, env: CookieEnvironment) -> "BranchingTables":
        nu = env.trial_table[env.M]
        fail = nu[: env.L]
        tot = fail.sum()
        eta_cdf = np.cumsum(fail / tot) if tot > 0 else np.ones(env.L)
        eta_cdf[-1] = 1.0
        log_fail = math.log(1.0 - nu[env.L]) if tot > 0 else -math.inf
        return cls(env.trial_cdf, eta_cdf, log_fail, env.L, env.M)


# --- kernels ----------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _trials_nb(cdf, L, M, first, successes_needed, st, out):
    """Run trials ``first, first+1, ...`` until ``successes_needed`` successes,
    adding failure counts into ``out``.  Returns the index of the next trial."""
    j = first
    got = 0
    while got < successes_needed:
        row = j - 1 if j <= M else M
        k = rng.categorical_nb(cdf[row], rng.uniform_nb(st))
        if k == L:
            got += 1
        else:
            out[k] += 1
        j += 1
    return j


@nb.njit(cache=True, inline="always")
def _split_nb(eta_cdf, count, st, out):
    for _ in range(count):
        out[rng.categorical_nb(eta_cdf, rng.uniform_nb(st))] += 1


@nb.njit(cache=True)
def _eta_nb(eta_cdf, log_fail, st, out):
    out[:] = 0
    _split_nb(eta_cdf, rng.geometric_nb(st, log_fail), st, out)


@nb.njit(cache=True)
def _sample_A_nb(cdf, eta_cdf, log_fail, L, M, m, method, st, out):
    out[:] = 0
    if method == DIRECT or m < M - 1:
        _trials_nb(cdf, L, M, 1, m + 1, st, out)
        return
    _trials_nb(cdf, L, M, 1, M, st, out)
    total = 0
    for _ in range(m - M + 1):
        total += rng.geometric_nb(st, log_fail)
    _split_nb(eta_cdf, total, st, out)


@nb.njit(cache=True, nogil=True)
def _A_batch(cdf, eta_cdf, log_fail, L, M, m, method, st, size):
    res = np.zeros((size, L), dtype=np.int64)
    buf = np.zeros(L, dtype=np.int64)
    for r in range(size):
        _sample_A_nb(cdf, eta_cdf, log_fail, L, M, m, method, st, buf)
        res[r] = buf
    return res


@nb.njit(cache=True, nogil=True)
def _eta_batch(eta_cdf, log_fail, L, st, size):
    res = np.zeros((size, L), dtype=np.int64)
    buf = np.zeros(L, dtype=np.int64)
    for r in range(size):
        _eta_nb(eta_cdf, log_fail, st, buf)
        res[r] = buf
    return res


@nb.njit(cache=True)
def _z_next_nb(cdf, eta_cdf, log_fail, L, M, z, method, st, buf, out):
    m = 0
    for l in range(L):
        m += z[l]
    _sample_A_nb(cdf, eta_cdf, log_fail, L, M, m, method, st, buf)
    for l in range(L - 1):
        out[l] = buf[l] + z[l + 1]
    out[L - 1] = buf[L - 1]


@nb.njit(cache=True, nogil=True)
def _z_chain_nb(cdf, eta_cdf, log_fail, L, M, key, z0, iterations, cap):
    """Trajectory ``Z_1..Z_iterations`` (int32) and a status flag.

    Status is ``1`` if ``|Z|`` exceeded ``cap``; the trajectory then stops."""
    st = rng.new_state_nb(key)
    traj = np.zeros((iterations, L), dtype=np.int32)
    z = z0.astype(np.int64).copy()
    nz = np.zeros(L, dtype=np.int64)
    buf = np.zeros(L, dtype=np.int64)
    for t in range(iterations):
        _z_next_nb(cdf, eta_cdf, log_fail, L, M, z, DECOMPOSITION, st, buf, nz)
        s = 0
        for l in range(L):
            z[l] = nz[l]
            traj[t, l] = nz[l]
            s += nz[l]
        if s > cap:
            return traj[: t + 1], 1
    return traj, 0


@nb.njit(cache=True, nogil=True)
def _z_paths_nb(cdf, eta_cdf, log_fail, L, M, base_key, r0, r1, n, method):
    """``(Z_0, ..., Z_{n-1})`` from ``Z_0 = 0`` for replicas ``r0..r1-1``."""
    out = np.zeros((r1 - r0, n, L), dtype=np.int64)
    buf = np.zeros(L, dtype=np.int64)
    nz = np.zeros(L, dtype=np.int64)
    for r in range(r1 - r0):
        st = rng.new_state_nb(rng.child_key_nb(base_key, r0 + r))
        for t in range(1, n):
            _z_next_nb(cdf, eta_cdf, log_fail, L, M, out[r, t - 1], method, st, buf, nz)
            out[r, t] = nz
    return out


# --- sampling API -----------------------------------------------------------


def sample_A(env: CookieEnvironment, m: int, stream: rng.Stream, size: int | None = None,
             method: str = "direct") -> np.ndarray:
    """Failure counts before the ``(m+1)``-th success; shape ``(L,)`` or
    ``(size, L)``.  ``method="decomposition"`` uses the geometric increments
    once ``m >= M-1``."""
    t = BranchingTables.of(env)
    code = DIRECT if method == "direct" else DECOMPOSITION
    st = stream.state()
    res = _A_batch(t.cdf, t.eta_cdf, t.log_fail, t.L, t.M, m, code, st, 1 if size is None else size)
    stream.counter = int(st[1])
    return res[0] if size is None else res


def sample_eta(env: CookieEnvironment, stream: rng.Stream, size: int | None = None) -> np.ndarray:
    """Multivariate geometric increments: a geometric total (success
    probability ``nu(1)``) split multinomially over failure types."""
    t = BranchingTables.of(env)
    st = stream.state()
    res = _eta_batch(t.eta_cdf, t.log_fail, t.L, st, 1 if size is None else size)
    stream.counter = int(st[1])
    return res[0] if size is None else res


def z_step(env: CookieEnvironment, z, stream: rng.Stream, method: str = "decomposition") -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    a = sample_A(env, int(z.sum()), stream, method=method)
    shift = np.zeros_like(z)
    shift[:-1] = z[1:]
    return a + shift


def z_paths(env: CookieEnvironment, n: int, replicas: int, seed: int,
            method: str = "decomposition", experiment: str = "zpaths", threads: int = 1):
    """``(replicas, n, L)`` array of ``(Z_0, ..., Z_{n-1})`` with ``Z_0 = 0``."""
    from .stats import chunk_bounds, parallel_map

    t = BranchingTables.of(env)
    base = np.uint64(rng.derive_key(seed, experiment))
    code = DIRECT if method == "direct" else DECOMPOSITION

    def work(b):
        return _z_paths_nb(t.cdf, t.eta_cdf, t.log_fail, t.L, t.M, base, b[0], b[1], n, code)

    parts = parallel_map(work, chunk_bounds(replicas, max(1024, replicas // 64)), threads)
    return np.concatenate(parts)


# --- exact moments and pgfs -------------------------------------------------


def _success_count_dist(env: CookieEnvironment, upto: int):
    """Distribution of the number of successes after each of the first
    ``upto`` cookie trials; ``dists[j][c] = P(S_j = c)``."""
    one = Fraction(1) if env.exact else 1.0
    dist = [one]
    out = [list(dist)]
    for j in range(upto):
        p = env.q[j][1]
        new = [0 * one] * (len(dist) + 1)
        for c, w in enumerate(dist):
            new[c] += w * (1 - p)
            new[c + 1] += w * p
        dist = new
        out.append(list(dist))
    return out


def expected_A(env: CookieEnvironment, m: int) -> tuple:
    """Exact ``E[A(m)]``.

    Cookie trial ``j`` happens iff at most ``m`` successes occurred before it;
    any successes still missing after the cookies each bring ``rho`` expected
    failures."""
    rho = rho_vector(env)
    dists = _success_count_dist(env, env.M)
    out = []
    for l in range(1, env.L + 1):
        tot = 0
        for j in range(1, env.M + 1):
            p_happens = sum(dists[j - 1][: m + 1])
            tot += p_happens * env.q[j - 1][-l]
        missing = sum(w * (m + 1 - c) for c, w in enumerate(dists[env.M]) if c <= m)
        out.append(tot + rho[l - 1] * missing)
    return tuple(out)


def expected_A_M_minus_1(env: CookieEnvironment) -> tuple:
    """Closed form ``E[A_l(M-1)] = sum_i q_i(-l) + rho_l (1 - q_i(1))``."""
    rho = rho_vector(env)
    return tuple(sum(law[-l] + rho[l - 1] * (1 - law[1]) for law in env.q)
                 for l in range(1, env.L + 1))


def conditional_mean_z1(env: CookieEnvironment, k) -> tuple:
    """``E[Z_1 | Z_0 = k]`` for any ``k``: ``E[A(|k|)]`` plus the shift."""
    ea = expected_A(env, int(sum(k)))
    shifted = list(k[1:]) + [0]
    return tuple(a + s for a, s in zip(ea, shifted))


def A_pgf(env: CookieEnvironment, m: int, t) -> float:
    """Exact ``E[prod_l t_l^{A_l(m)}]``; needs ``sum_l nu(-l) t_l < 1``.

    Dynamic programme over the cookie trials keyed by the success count,
    followed by one geometric factor per missing success."""
    L = env.L
    one = Fraction(1) if env.exact and all(isinstance(x, (int, Fraction)) for x in t) else 1.0
    t = [one * x for x in t]
    stopped = 0 * one
    P = [one] + [0 * one] * m  # P[c]: weight with c < m+1 successes, still running
    for j in range(env.M):
        law = env.q[j]
        w = sum(law[-l] * t[l - 1] for l in range(1, L + 1))
        p = law[1]
        stopped += P[m] * p
        P = [P[c] * w + (P[c - 1] * p if c > 0 else 0) for c in range(m + 1)]
    denom = 1 - sum(env.nu[-l] * t[l - 1] for l in range(1, L + 1))
    h = env.nu[1] / denom
    return stopped + sum(P[c] * h ** (m + 1 - c) for c in range(m + 1))


def eta_pgf(env: CookieEnvironment, s) -> float:
    rho = rho_vector(env)
    return 1 / (1 + sum(r * (1 - x) for r, x in zip(rho, s)))


def eta_pmf(env: CookieEnvironment, i) -> float:
    """``P(eta = i) = nu(1) * |i|! / prod(i_k!) * prod nu(-k)^{i_k}``."""
    tot = sum(i)
    coeff = math.factorial(tot)
    for x in i:
        coeff //= math.factorial(x)
    p = env.nu[1] * coeff
    for k, x in enumerate(i, start=1):
        p *= env.nu[-k] ** x
    return p


# --- support ----------------------------------------------------------------


@dataclass(frozen=True)
class SupportSet:
    L_prime: int
    d: tuple
    bounds: tuple  # None for an unbounded coordinate

    def contains(self, z) -> bool:
        return all(b is None or 0 <= x <= b for x, b in zip(z, self.bounds)) and min(z) >= 0


def support_set(env: CookieEnvironment) -> SupportSet:
    """Support of ``Z_n`` for ``n >= L``: coordinates up to
    ``L' = max{l: nu(-l) > 0}`` are unbounded, coordinate ``l > L'`` is at
    most ``d_l + ... + d_L`` with ``d_l = #{k: q_k(-l) > 0}``."""
    L = env.L
    l_prime = max(l for l in range(1, L + 1) if env.nu[-l] > 0)
    d = tuple(sum(1 for law in env.q if law[-l] > 0) for l in range(1, L + 1))
    bounds = tuple(None if l <= l_prime else sum(d[l - 1:]) for l in range(1, L + 1))
    return SupportSet(l_prime, d, bounds)


# --- stationary estimation ------------------------------------------------


@dataclass
class StationarySummary:
    mean_z: list
    se: list
    histogram: dict          # state tuple -> (mass, se); tail pooled under "tail"
    iterations: int
    burn_in: int
    tail_index: tuple        # (alpha, se) of P(|Z| > t) ~ t^-alpha
    converged: bool          # first moment judged finite
    running_mean: list = field(default_factory=list)  # (n, mean |Z|) checkpoints
    samples: np.ndarray | None = field(default=None, repr=False)
    speed_formula_se: float = math.nan

    @property
    def speed_formula_value(self) -> float:
        return speed_from_stationary(self.mean_z)

    def as_dict(self) -> dict:
        hist = {",".join(map(str, k)) if isinstance(k, tuple) else k: list(v)
                for k, v in self.histogram.items()}
        return {"mean_z": self.mean_z, "se": self.se, "histogram": hist,
                "iterations": self.iterations, "burn_in": self.burn_in,
                "tail_index": list(self.tail_index), "converged": self.converged,
                "running_mean": self.running_mean,
                "speed_formula_value": self.speed_formula_value,
                "speed_formula_se": self.speed_formula_se}


def run_chain(env: CookieEnvironment, iterations: int, seed: int, z0=None,
              experiment: str = "stationary", cap: int = 10**7) -> np.ndarray:
    """Raw ``(iterations, L)`` trajectory; raises if ``|Z|`` exceeds ``cap``."""
    t = BranchingTables.of(env)
    z0 = np.zeros(env.L, dtype=np.int64) if z0 is None else np.asarray(z0, dtype=np.int64)
    key = np.uint64(rng.derive_key(seed, experiment))
    traj, status = _z_chain_nb(t.cdf, t.eta_cdf, t.log_fail, t.L, t.M, key, z0, iterations, cap)
    if status:
        raise DivergenceSuspected(f"|Z| exceeded {cap} after {traj.shape[0]} iterations")
    return traj


def running_means(x, points=12):
    """Running mean of ``x`` at geometrically spaced checkpoints."""
    n = x.shape[0]
    cps = np.unique(np.geomspace(max(16, n // 2**points), n, points).astype(np.int64))
    cs = np.cumsum(x, dtype=np.float64)
    return [(int(c), float(cs[c - 1] / c)) for c in cps]


def estimate_stationary(env: CookieEnvironment, iterations: int, seed: int, burn_in: int | None = None,
                        z0=None, hist_level: int | None = None, keep_samples: bool = False,
                        experiment: str = "stationary", growth_limit: float = 0.9,
                        cap: int = 10**7) -> StationarySummary:
    """Ergodic averages of the chain with batch-means standard errors.

    The histogram covers every state with ``|z| <= hist_level`` (default
    ``max(M-2, 2)``).  Finiteness of ``E|Z_inf|`` is judged from the tail
    index of ``|Z|`` (finite iff the index exceeds one).  Raises
    :class:`DivergenceSuspected` when the running mean of ``|Z|`` grows at
    least like ``n**growth_limit`` (the recurrent regime) or ``|Z|`` exceeds
    ``cap``."""
    if compute_delta(env) <= 1:
        raise DivergenceSuspected("the chain is only ergodic for delta > 1")
    burn_in = iterations // 10 if burn_in is None else burn_in
    traj = run_chain(env, iterations + burn_in, seed, z0, experiment, cap)[burn_in:]
    size = traj.sum(axis=1).astype(np.float64)
    rm = running_means(size)
    if len(rm) >= 4 and rm[0][1] > 0:
        half = rm[len(rm) // 2:]
        growth = loglog_slope([c for c, _ in half], [max(v, 1e-300) for _, v in half]).slope
        if growth >= growth_limit:
            raise DivergenceSuspected(f"running mean of |Z| grows like n^{growth:.2f}")
    mean, se = batch_means(traj.astype(np.float64))
    weights = np.array([2.0] + [1.0] * (env.L - 1))
    wm, wse = batch_means(traj @ weights)
    hist_level = max(env.M - 2, 2) if hist_level is None else hist_level
    hist = {}
    for state in states_up_to(env.L, hist_level):
        ind = np.all(traj == np.array(state, dtype=np.int32), axis=1).astype(np.float64)
        m, s = batch_means(ind)
        hist[state] = (float(m), float(s))
    tail = 1.0 - sum(v[0] for v in hist.values())
    hist["tail"] = (max(tail, 0.0), float("nan"))
    alpha, alpha_se, _ = survival_tail_index(size)
    converged = bool(np.isfinite(alpha) and alpha - 3 * alpha_se > 1.0)
    return StationarySummary([float(x) for x in mean], [float(x) for x in se], hist,
                             iterations, burn_in, (alpha, alpha_se), converged, rm,
                             traj if keep_samples else None, float(wse / (1.0 + wm) ** 2))


def states_up_to(L: int, level: int):
    """All ``z`` in ``Z_+^L`` with ``|z| <= level``, lexicographic order."""
    out = []

    def rec(prefix, left):
        if len(prefix) == L:
            out.append(tuple(prefix))
            return
        for x in range(left + 1):
            rec(prefix + [x], left - x)

    rec([], level)
    return sorted(out)


def speed_from_stationary(mean_z) -> float:
    """``1 / (1 + 2 m_1 + m_2 + ... + m_L)``."""
    w = [2.0] + [1.0] * (len(mean_z) - 1)
    return 1.0 / (1.0 + sum(a * b for a, b in zip(w, mean_z)))


def write_histogram_csv(summary: StationarySummary, L: int, fh):
    w = csv.writer(fh)
    w.writerow([f"z{l}" for l in range(1, L + 1)] + ["probability"])
    for state, (mass, _) in summary.histogram.items():
        if state == "tail":
            continue
        w.writerow(list(state) + [f"{mass:.17g}"])


def summary_json(summary: StationarySummary) -> str:
    return json.dumps({"mean_z": summary.mean_z, "se": summary.se,
                       "speed_formula_value": summary.speed_formula_value,
                       "speed_formula_se": summary.speed_formula_se}, sort_keys=True)


# --- distributional equivalence with the walk -------------------------------


def backward_profile_vs_z_test(env: CookieEnvironment, n: int, replicas: int, seed: int,
                               threads: int = 1, min_cell: float = 5.0,
                               horizon: int | None = None) -> dict:
    """Chi-square comparison of ``(V_{n-1}, ..., V_0)`` from walks with
    ``(Z_0, ..., Z_{n-1})`` from the chain, on the joint cell of all ``n*L``
    counts."""
    from .walk import DEFAULT_HORIZON, HorizonExceeded, simulate_profiles

    T, prof, _, trunc = simulate_profiles(env, n, replicas, seed, horizon or DEFAULT_HORIZON, threads,
                                          experiment="markov-walk")
    if trunc.any():
        raise HorizonExceeded(f"{int(trunc.sum())} walks did not reach level {n}")
    walk_side = prof[:, ::-1, :].reshape(replicas, -1)
    z_side = z_paths(env, n, replicas, seed, experiment="markov-z", threads=threads).reshape(replicas, -1)
    cells, ca, cb = align_counts(walk_side, z_side)
    if cells.shape[0] == 1:
        p, stat, df = 1.0, 0.0, 0
    else:
        p, stat, df = chi_square_two_sample(ca, cb, min_cell)
    p0 = {"walk": float(np.mean(np.all(walk_side == 0, axis=1))),
          "z": float(np.mean(np.all(z_side == 0, axis=1)))}
    return {"n": n, "replicas": replicas, "p_value": p, "statistic": stat, "df": df,
            "distinct_cells": int(cells.shape[0]), "p_all_zero": p0}
