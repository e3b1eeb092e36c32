"""Multi-type Galton-Watson processes with emigration.

Each generation, if ``U(n) >= N`` componentwise then ``N_i`` type-``i``
particles leave and the remaining ``U_i(n) - N_i`` reproduce independently;
otherwise everything leaves and the process is absorbed at ``0``.

Two offspring families are provided: the geometric-plus-shift family ``W``
(a type-``i`` parent has ``eta + e_{i-1}`` children with ``eta`` multivariate
geometric) and arbitrary finitely supported tables.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng
from .branching import BranchingTables, DivergenceSuspected, _trials_nb, run_chain
from .environment import CookieEnvironment, compute_delta, rho_vector
from .spectral import (MomentUnavailable, NotPositivelyRegular, perron_pair, positively_regular,
                       w_mean_matrix, w_sigma)
from .stats import chunk_bounds, linear_fit, loglog_slope, parallel_map, survival_tail_index, batch_means

KIND_W = 0
KIND_TABLE = 1


class CouplingViolation(AssertionError):
    def __init__(self, dump):
        self.dump = dump
        super().__init__(f"Z failed to dominate W: {dump}")


class InvalidConfig(ValueError):
    pass


# --- offspring handles --------------------------------------------------------


class WOffspring:
    """Rows ``chi_i = eta + e_{i-1}`` (``e_0 = 0``), ``eta`` with pgf
    ``1 / (1 + sum_l rho_l (1 - s_l))``."""

    kind = KIND_W

    def __init__(self, rho, check_critical: bool = True):
        self.rho = tuple(float(r) for r in rho)
        self.L = len(self.rho)
        if any(r < 0 for r in self.rho):
            raise ValueError("rho must be nonnegative")
        if check_critical and abs(sum((l + 1) * r for l, r in enumerate(self.rho)) - 1) > 1e-12:
            raise ValueError("sum_l l rho_l must equal 1 for a critical W family")
        if self.rho[-1] <= 0:
            raise NotPositivelyRegular("rho_L = 0 leaves the last column of the mean matrix empty")
        tot = sum(self.rho)
        self.p_success = 1.0 / (1.0 + tot)
        self.eta_cdf = np.cumsum(np.array(self.rho) / tot) if tot > 0 else np.ones(self.L)
        self.eta_cdf[-1] = 1.0
        self.log_fail = math.log(1.0 - self.p_success) if tot > 0 else -math.inf

    def mean_matrix(self) -> np.ndarray:
        return w_mean_matrix(self.rho)

    def factorial_moments(self) -> np.ndarray:
        return w_sigma(self.rho)

    def pgf(self, s) -> np.ndarray:
        """``f_i(s) = s_{i-1} / (1 + sum rho (1 - s))`` with ``s_0 = 1``."""
        s = np.asarray(s, dtype=np.float64)
        d = 1.0 + np.dot(self.rho, 1.0 - s)
        return np.concatenate([[1.0], s[:-1]]) / d

    def one_minus_pgf(self, t) -> np.ndarray:
        """``1 - f(1 - t)`` evaluated without cancellation."""
        t = np.asarray(t, dtype=np.float64)
        rt = float(np.dot(self.rho, t))
        return (rt + np.concatenate([[0.0], t[:-1]])) / (1.0 + rt)

    def kernel_args(self):
        return (self.kind, self.eta_cdf, self.log_fail,
                np.ones((self.L, 1)), np.zeros((self.L, 1, self.L), dtype=np.int64))

    def sample_rows(self, i: int, size: int, seed: int) -> np.ndarray:
        """``size`` independent offspring vectors of a type-``i`` parent (0-based)."""
        key = np.uint64(rng.derive_key(seed, "offspring", i))
        return _rows_batch(*self.kernel_args(), self.L, i, size, key)


class TableOffspring:
    """Finitely supported offspring law per type: ``rows[i] = (children, probs)``
    with ``children`` of shape ``(K_i, L)``."""

    kind = KIND_TABLE

    def __init__(self, rows):
        self.L = len(rows)
        kmax = max(len(p) for _, p in rows)
        self.children = np.zeros((self.L, kmax, self.L), dtype=np.int64)
        self.cdf = np.ones((self.L, kmax))
        self._rows = []
        for i, (ch, p) in enumerate(rows):
            ch = np.asarray(ch, dtype=np.int64).reshape(len(p), self.L)
            p = np.asarray(p, dtype=np.float64)
            if np.any(p < 0) or abs(p.sum() - 1) > 1e-12 or np.any(ch < 0):
                raise ValueError(f"row {i} is not a probability table on Z_+^L")
            self.children[i, : len(p)] = ch
            c = np.cumsum(p)
            c[-1] = 1.0
            self.cdf[i, : len(p)] = c
            self._rows.append((ch, p))

    def mean_matrix(self) -> np.ndarray:
        return np.array([p @ ch for ch, p in self._rows])

    def factorial_moments(self) -> np.ndarray:
        L = self.L
        s = np.empty((L, L, L))
        for k, (ch, p) in enumerate(self._rows):
            chf = ch.astype(np.float64)
            s[k] = np.einsum("a,ai,aj->ij", p, chf, chf) - np.diag(p @ chf)
        return s

    def pgf(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return np.array([p @ np.prod(s ** ch, axis=1) for ch, p in self._rows])

    def one_minus_pgf(self, t) -> np.ndarray:
        return 1.0 - self.pgf(1.0 - np.asarray(t, dtype=np.float64))

    def kernel_args(self):
        return (self.kind, np.ones(self.L), -math.inf, self.cdf, self.children)

    def sample_rows(self, i: int, size: int, seed: int) -> np.ndarray:
        key = np.uint64(rng.derive_key(seed, "offspring", i))
        return _rows_batch(*self.kernel_args(), self.L, i, size, key)


class MomentsOnly:
    """Wraps a handle and hides its analytic moments (forces Monte Carlo)."""

    def __init__(self, inner):
        self.inner = inner
        self.L = inner.L

    def factorial_moments(self):
        raise MomentUnavailable("analytic moments hidden")

    def __getattr__(self, name):
        return getattr(self.inner, name)


def make_W_offspring(rho, check_critical: bool = True) -> WOffspring:
    return WOffspring(rho, check_critical)


# --- kernels ------------------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _add_children(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, i, count, st, out):
    """Add the offspring of ``count`` type-``i`` parents into ``out``."""
    if count <= 0:
        return
    if kind == KIND_W:
        if i >= 1:
            out[i - 1] += count
        total = 0
        for _ in range(count):
            total += rng.geometric_nb(st, log_fail)
        for _ in range(total):
            out[rng.categorical_nb(eta_cdf, rng.uniform_nb(st))] += 1
    else:
        for _ in range(count):
            a = rng.categorical_nb(tab_cdf[i], rng.uniform_nb(st))
            for j in range(L):
                out[j] += tab_ch[i, a, j]


@nb.njit(cache=True, nogil=True)
def _rows_batch(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, i, size, key):
    st = rng.new_state_nb(key)
    res = np.zeros((size, L), dtype=np.int64)
    for r in range(size):
        _add_children(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, i, 1, st, res[r])
    return res


@nb.njit(cache=True)
def _gw_step_nb(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, N, u, st, out):
    out[:] = 0
    for i in range(L):
        if u[i] < N[i]:
            return
    for i in range(L):
        _add_children(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, i, u[i] - N[i], st, out)


@nb.njit(cache=True, nogil=True)
def _survival_nb(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, N, K, horizon, base_key, r0, r1, cap):
    """Extinction generation per replica (``horizon + 1`` if alive at the
    horizon) plus per-generation sums of ``|U(n)|`` and ``|U(n)|^2`` over
    survivors."""
    death = np.empty(r1 - r0, dtype=np.int64)
    s1 = np.zeros(horizon + 1, dtype=np.int64)
    s2 = np.zeros(horizon + 1, dtype=np.float64)
    u = np.zeros(L, dtype=np.int64)
    nu_ = np.zeros(L, dtype=np.int64)
    status = 0
    for r in range(r1 - r0):
        st = rng.new_state_nb(rng.child_key_nb(base_key, r0 + r))
        u[:] = K
        death[r] = horizon + 1
        for n in range(1, horizon + 1):
            _gw_step_nb(kind, eta_cdf, log_fail, tab_cdf, tab_ch, L, N, u, st, nu_)
            size = 0
            for j in range(L):
                u[j] = nu_[j]
                size += nu_[j]
            if size == 0:
                death[r] = n
                break
            if size > cap:
                status = 1
                death[r] = n
                break
            s1[n] += size
            s2[n] += float(size) * float(size)
    return death, s1, s2, status


# --- configuration and stepping ----------------------------------------------


@dataclass
class EmigrationConfig:
    N: tuple
    initial: tuple
    offspring: object

    def __post_init__(self):
        self.N = tuple(int(x) for x in self.N)
        self.initial = tuple(int(x) for x in self.initial)
        L = self.offspring.L
        if len(self.N) != L or len(self.initial) != L:
            raise InvalidConfig(f"N and K must have length {L}")
        if min(self.N) < 1:
            raise InvalidConfig("every N_i must be at least 1")
        if any(k < n for k, n in zip(self.initial, self.N)):
            raise InvalidConfig("the initial vector must dominate N")

    @property
    def L(self):
        return self.offspring.L


@dataclass
class GWState:
    u_vec: np.ndarray
    generation: int = 0

    @property
    def extinct(self) -> bool:
        return not np.any(self.u_vec)


def gw_step(cfg: EmigrationConfig, state: GWState, stream: rng.Stream) -> GWState:
    st = stream.state()
    out = np.zeros(cfg.L, dtype=np.int64)
    _gw_step_nb(*cfg.offspring.kernel_args(), cfg.L, np.array(cfg.N, dtype=np.int64),
                np.asarray(state.u_vec, dtype=np.int64), st, out)
    stream.counter = int(st[1])
    return GWState(out, state.generation + 1)


# --- survival statistics -------------------------------------------------------


@dataclass
class SurvivalTable:
    n: np.ndarray
    survivors: np.ndarray     # replicas with U(n) != 0
    replicas: int
    size_sum: np.ndarray
    size_sq: np.ndarray

    @property
    def mu_hat(self) -> np.ndarray:
        return self.survivors / self.replicas

    @property
    def se(self) -> np.ndarray:
        m = self.mu_hat
        return np.sqrt(m * (1 - m) / self.replicas)

    @property
    def cond_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.survivors > 0, self.size_sum / np.maximum(self.survivors, 1), np.nan)

    @property
    def cond_mean_se(self) -> np.ndarray:
        k = np.maximum(self.survivors, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.maximum(self.size_sq / k - self.cond_mean ** 2, 0) * k / np.maximum(k - 1, 1)
            return np.where(self.survivors > 1, np.sqrt(var / k), np.nan)

    def write_csv(self, fh):
        w = csv.writer(fh)
        w.writerow(["n", "mu_hat", "se", "cond_mean", "survivors"])
        for n, m, s, c, k in zip(self.n, self.mu_hat, self.se, self.cond_mean, self.survivors):
            w.writerow([int(n), f"{m:.17g}", f"{s:.17g}", "" if not np.isfinite(c) else f"{c:.17g}", int(k)])

    def as_dict(self):
        return {"replicas": self.replicas, "n": self.n.tolist(), "survivors": self.survivors.tolist(),
                "mu_hat": self.mu_hat.tolist(),
                "cond_mean": [None if not np.isfinite(c) else float(c) for c in self.cond_mean]}


def survival_experiment(cfg: EmigrationConfig, horizon: int, replicas: int, seed: int,
                        threads: int = 1, experiment: str = "gw-survival",
                        cap: int = 10**9) -> SurvivalTable:
    """Independent replicas from ``K``; survival counts come from one
    extinction time per replica, so ``mu_hat`` is exactly nonincreasing."""
    if not positively_regular(cfg.offspring.mean_matrix(), first_try=cfg.L):
        raise NotPositivelyRegular("offspring mean matrix")
    args = cfg.offspring.kernel_args()
    N = np.array(cfg.N, dtype=np.int64)
    K = np.array(cfg.initial, dtype=np.int64)
    base = np.uint64(rng.derive_key(seed, experiment))

    def work(b):
        return _survival_nb(*args, cfg.L, N, K, horizon, base, b[0], b[1], cap)

    parts = parallel_map(work, chunk_bounds(replicas, 65536), threads)
    if any(p[3] for p in parts):
        raise DivergenceSuspected(f"population exceeded {cap}")
    death = np.concatenate([p[0] for p in parts])
    s1 = np.sum([p[1] for p in parts], axis=0)
    s2 = np.zeros(horizon + 1)
    for p in parts:
        s2 += p[2]
    counts = np.bincount(np.minimum(death, horizon + 1), minlength=horizon + 2)
    # alive at n  <=>  death > n
    alive = replicas - np.cumsum(counts)[: horizon + 1]
    n = np.arange(horizon + 1)
    s1 = s1.astype(np.float64)
    s1[0] = replicas * sum(cfg.initial)
    s2[0] = replicas * float(sum(cfg.initial)) ** 2
    return SurvivalTable(n, alive, replicas, s1, s2)


@dataclass
class TailFit:
    exponent: float          # minus the log-log slope of mu_hat
    ci95: float
    n0: int
    n1: int
    sse_power: float         # weighted residuals of log mu vs log n
    sse_geometric: float     # weighted residuals of log mu vs n
    geometric_rate: float
    preferred: str           # "power" or "geometric"
    cond_mean_slope: float = math.nan
    cond_mean_ci95: float = math.nan

    def as_dict(self):
        return dict(self.__dict__)


class EmptyWindow(ValueError):
    pass


def fit_window(table: SurvivalTable, min_survivors: int = 200):
    """``n0`` = first ``n`` with ``mu_hat < 0.5``; ``n1`` = last ``n`` with at
    least ``min_survivors`` survivors."""
    mu = table.mu_hat
    below = np.nonzero(mu < 0.5)[0]
    enough = np.nonzero(table.survivors >= min_survivors)[0]
    below = below[below >= 1]
    if below.size == 0 or enough.size == 0:
        raise EmptyWindow("no generation satisfies both window conditions")
    n0, n1 = int(below[0]), int(enough[-1])
    if n1 - n0 < 2:
        raise EmptyWindow(f"window [{n0}, {n1}] holds fewer than three generations")
    return n0, n1


def fit_survival_tail(table: SurvivalTable, min_survivors: int = 200) -> TailFit:
    """Weighted least squares of ``log mu_hat`` on ``log n`` over the window
    (weights ``R mu / (1 - mu)``, the inverse delta-method variance), with a
    geometric fit on the same points for comparison."""
    n0, n1 = fit_window(table, min_survivors)
    sl = slice(n0, n1 + 1)
    n = table.n[sl].astype(np.float64)
    mu = table.mu_hat[sl]
    w = table.replicas * mu / np.maximum(1 - mu, 1e-300)
    pw = loglog_slope(n, mu, w)
    ge = linear_fit(n, np.log(mu), w)
    sse_p = float(np.sum(w * (np.log(mu) - pw.intercept - pw.slope * np.log(n)) ** 2))
    sse_g = float(np.sum(w * (np.log(mu) - ge.intercept - ge.slope * n) ** 2))
    cm = table.cond_mean[sl]
    cfit = linear_fit(n, cm)
    return TailFit(-pw.slope, pw.ci, n0, n1, sse_p, sse_g, float(math.exp(ge.slope)),
                   "power" if sse_p <= sse_g else "geometric", cfit.slope, cfit.ci)


# --- coupling with the backward-jump chain ----------------------------------


@nb.njit(cache=True, nogil=True)
def _eta_into(eta_cdf, log_fail, st, out):
    g = rng.geometric_nb(st, log_fail)
    for _ in range(g):
        out[rng.categorical_nb(eta_cdf, rng.uniform_nb(st))] += 1


@nb.njit(cache=True, nogil=True)
def _coupled_nb(cdf, eta_cdf, log_fail, L, M, base_key, r0, r1, horizon):
    """Run ``(Z, W)`` from ``(M, ..., M)`` with ``N = (M-1, M, ..., M)``.

    Returns per replica: number of violating generations, the last
    generation with ``W != 0``, and the first violating state (or -1)."""
    R = r1 - r0
    viol = np.zeros(R, dtype=np.int64)
    last_alive = np.zeros(R, dtype=np.int64)
    dump = -np.ones((R, 2 * L + 1), dtype=np.int64)
    N = np.full(L, M, dtype=np.int64)
    N[0] = M - 1
    thr = M * L - 1
    z = np.zeros(L, dtype=np.int64)
    w = np.zeros(L, dtype=np.int64)
    nz = np.zeros(L, dtype=np.int64)
    nw = np.zeros(L, dtype=np.int64)
    eta = np.zeros(L, dtype=np.int64)
    for r in range(R):
        st = rng.new_state_nb(rng.child_key_nb(base_key, r0 + r))
        z[:] = M
        w[:] = M
        for n in range(1, horizon + 1):
            m = 0
            for l in range(L):
                m += z[l]
            nz[:] = 0
            nw[:] = 0
            w_alive = True
            for l in range(L):
                if w[l] < N[l]:
                    w_alive = False
            if w_alive:
                any_w = False
                for l in range(L):
                    if w[l] != 0:
                        any_w = True
                w_alive = any_w
            if m >= thr:
                # A(ML-1) = A(M-1) + eta_1 + ... + eta_{(L-1)M}
                _trials_nb(cdf, L, M, 1, M, st, nz)
                for _ in range((L - 1) * M):
                    _eta_into(eta_cdf, log_fail, st, nz)
                z_ok = True
                for l in range(L):
                    if z[l] < N[l]:
                        z_ok = False
                if z_ok:
                    # shared increments, enumerated type by type
                    for i in range(L):
                        for k in range(z[i] - N[i]):
                            eta[:] = 0
                            _eta_into(eta_cdf, log_fail, st, eta)
                            for l in range(L):
                                nz[l] += eta[l]
                            if w_alive and k < w[i] - N[i]:
                                for l in range(L):
                                    nw[l] += eta[l]
                                if i >= 1:
                                    nw[i - 1] += 1
                else:
                    for _ in range(m - thr):
                        _eta_into(eta_cdf, log_fail, st, nz)
                    w_alive = False
                    nw[:] = 0
            else:
                _trials_nb(cdf, L, M, 1, m + 1, st, nz)
                nw[:] = 0
            if not w_alive:
                nw[:] = 0
            for l in range(L - 1):
                nz[l] += z[l + 1]
            bad = False
            for l in range(L):
                if nz[l] < nw[l]:
                    bad = True
            if bad:
                viol[r] += 1
                if dump[r, 0] < 0:
                    dump[r, 0] = n
                    for l in range(L):
                        dump[r, 1 + l] = nz[l]
                        dump[r, 1 + L + l] = nw[l]
            size_w = 0
            for l in range(L):
                z[l] = nz[l]
                w[l] = nw[l]
                size_w += nw[l]
            if size_w == 0:
                break
            last_alive[r] = n
    return viol, last_alive, dump


@dataclass
class DominanceReport:
    replicas: int
    horizon: int
    violations: int
    violating_replicas: int
    w_alive_at: dict          # generation -> number of replicas with W != 0
    first_violation: list = field(default_factory=list)

    def as_dict(self):
        return {"replicas": self.replicas, "horizon": self.horizon, "violations": self.violations,
                "violating_replicas": self.violating_replicas,
                "w_alive_at": {str(k): v for k, v in self.w_alive_at.items()},
                "first_violation": self.first_violation}

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True)


def coupled_Z_W_run(env: CookieEnvironment, horizon: int, replicas: int, seed: int,
                    threads: int = 1, raise_on_violation: bool = True,
                    experiment: str = "coupling") -> DominanceReport:
    """Drive ``Z`` and the emigration process ``W`` from one increment stream
    and check ``Z_n >= W(n)`` at every generation.

    After ``W`` dies the dominance is trivial, so a replica stops there."""
    L = env.L
    if env.nu[-L] == 0:
        raise InvalidConfig("only the case nu(-L) > 0 is supported")
    t = BranchingTables.of(env)
    base = np.uint64(rng.derive_key(seed, experiment))

    def work(b):
        return _coupled_nb(t.cdf, t.eta_cdf, t.log_fail, L, env.M, base, b[0], b[1], horizon)

    parts = parallel_map(work, chunk_bounds(replicas, 4096), threads)
    viol = np.concatenate([p[0] for p in parts])
    last = np.concatenate([p[1] for p in parts])
    dump = np.concatenate([p[2] for p in parts])
    checkpoints = sorted({1, 10, 100, horizon} & set(range(1, horizon + 1)))
    alive = {c: int(np.count_nonzero(last >= c)) for c in checkpoints}
    bad = np.nonzero(viol)[0]
    first = [[int(r)] + dump[r].tolist() for r in bad[:10]]
    rep = DominanceReport(replicas, horizon, int(viol.sum()), int(bad.size), alive, first)
    if raise_on_violation and rep.violations:
        raise CouplingViolation(rep.as_dict())
    return rep


# --- moment divergence ---------------------------------------------------------


@dataclass
class MomentProbe:
    kappa: int
    estimate: float
    se: float
    running: list            # (n, running mean of |Z|^kappa)
    finite: bool

    def as_dict(self):
        return dict(self.__dict__)


def moment_divergence_probe(env: CookieEnvironment, kappa_max: int, iterations: int, seed: int,
                            experiment: str = "moment-probe") -> dict:
    """Running estimates of ``E|Z_inf|^kappa`` with a finiteness verdict.

    ``P(|Z_inf| > t)`` is fitted as ``t^-alpha``; the ``kappa``-th moment is
    declared finite when ``alpha - 3 se > kappa`` and nonconvergent
    otherwise.  The running means are reported alongside."""
    from .branching import running_means

    if compute_delta(env) <= 1:
        raise DivergenceSuspected("the chain is only ergodic for delta > 1")
    burn = iterations // 10
    size = run_chain(env, iterations + burn, seed, experiment=experiment).sum(axis=1)[burn:]
    size = size.astype(np.float64)
    alpha, alpha_se, thresholds = survival_tail_index(size)
    probes = []
    for kappa in range(1, kappa_max + 1):
        x = size ** kappa
        m, se = batch_means(x)
        finite = bool(np.isfinite(alpha) and alpha - 3 * alpha_se > kappa)
        probes.append(MomentProbe(kappa, float(m), float(se), running_means(x), finite))
    return {"delta": float(compute_delta(env)), "iterations": iterations, "burn_in": burn,
            "tail_index": alpha, "tail_index_se": alpha_se, "thresholds": thresholds,
            "nonconvergent": [p.kappa for p in probes if not p.finite],
            "probes": [p.as_dict() for p in probes]}


def w_offspring_for(env: CookieEnvironment) -> WOffspring:
    """The W family attached to an environment (``rho_l = nu(-l)/nu(1)``)."""
    return WOffspring(rho_vector(env))
