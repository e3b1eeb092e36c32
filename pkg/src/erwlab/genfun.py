"""Generating-function computations.

Deterministic part: iterates of the W-family pgf from ``0``, the
``n (1 - f^n(0))`` asymptotics and the growth exponent of
``gamma_n = prod_k prod_l f^k_l(0)^{-N_l}``.

Monte Carlo part: the transform ``G(s) = E prod_l (1 + l(s-1))^{Z_l}`` of the
stationary chain, the coefficient functions ``a`` and ``b`` built from failure
counts, and the residual of

    1 - G(1/(2-s)) = a(s) (1 - G(s)) + b(s).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng
from .branching import expected_A, estimate_stationary, sample_A, states_up_to
from .environment import CookieEnvironment, compute_delta
from .spectral import perron_pair, sigma_beta_theta
from .emigration import WOffspring
from .stats import batch_means, linear_fit

UNDERFLOW = 1e-14


class DegenerateStart(ValueError):
    pass


class OutsideDomain(ValueError):
    pass


# --- pgf iteration ------------------------------------------------------------


@nb.njit(cache=True)
def _iterate_tail(rho, n):
    """Rows ``t_k = 1 - f^k(0)`` for ``k = 0..n``.

    ``1 - f_i(1 - t) = (rho.t + t_{i-1}) / (1 + rho.t)`` has no subtraction,
    so precision is kept however close ``f^k(0)`` gets to ``1``."""
    L = rho.shape[0]
    out = np.empty((n + 1, L))
    out[0, :] = 1.0
    for k in range(1, n + 1):
        rt = 0.0
        for l in range(L):
            rt += rho[l] * out[k - 1, l]
        d = 1.0 + rt
        out[k, 0] = rt / d
        for l in range(1, L):
            out[k, l] = (rt + out[k - 1, l - 1]) / d
    return out


@dataclass
class PgfIterates:
    rho: tuple
    tail: np.ndarray              # (n+1, L) rows 1 - f^k(0)
    underflow_at: int | None      # first k with some entry below 1e-14

    @property
    def values(self) -> np.ndarray:
        return 1.0 - self.tail


def iterate_f(rho, n: int) -> PgfIterates:
    rho_a = np.asarray([float(r) for r in rho])
    if rho_a[-1] <= 0:
        raise ValueError("rho_L must be positive")
    tail = _iterate_tail(rho_a, n)
    small = np.nonzero(tail.min(axis=1) < UNDERFLOW)[0]
    return PgfIterates(tuple(rho_a), tail, int(small[0]) if small.size else None)


@dataclass
class KolmogorovReport:
    n: int
    scaled: list          # n (1 - f^n(0))
    limit: list           # u / beta
    max_rel_error: float

    def as_dict(self):
        return dict(self.__dict__)


def w_constants(rho):
    """``(u, v, beta)`` of the W family."""
    off = WOffspring(rho)
    s = perron_pair(off.mean_matrix())
    rep = sigma_beta_theta(off, np.ones(len(rho)), s.u, s.v)
    return s.u, s.v, rep.beta


def kolmogorov_check(rho, n: int) -> KolmogorovReport:
    """Compare ``n (1 - f^n(0))`` with ``u / beta``."""
    u, _, beta = w_constants(rho)
    it = iterate_f(rho, n)
    scaled = n * it.tail[n]
    limit = u / beta
    err = float(np.max(np.abs(scaled - limit) / limit))
    return KolmogorovReport(n, scaled.tolist(), limit.tolist(), err)


@dataclass
class GammaFit:
    theta_hat: float
    ci95: float
    k0: int
    window: tuple
    theta_expected: float
    log_gamma_nondecreasing: bool

    def as_dict(self):
        return dict(self.__dict__)


def log_gamma(rho, N, n_max: int):
    """``(k0, log gamma_n for n = 0..n_max)`` with the product started at the
    first ``k`` where every ``f^k_l(0)`` is positive (earlier terms are 0)."""
    it = iterate_f(rho, n_max)
    pos = np.nonzero(it.tail.max(axis=1) < 1.0)[0]
    if pos.size == 0:
        raise DegenerateStart("f^k(0) never becomes positive")
    k0 = int(pos[0])
    if k0 > len(rho):
        raise DegenerateStart(f"first positive iterate at k = {k0} > L")
    terms = np.zeros(it.tail.shape[0])
    terms[k0:] = -np.log1p(-it.tail[k0:]) @ np.asarray(N, dtype=np.float64)
    return k0, np.cumsum(terms)


def gamma_fit(rho, N, n_max: int, points: int = 200) -> GammaFit:
    """Least-squares slope of ``log gamma_n`` on ``log n`` over
    ``[n_max/10, n_max]`` at geometrically spaced ``n``."""
    k0, lg = log_gamma(rho, N, n_max)
    ns = np.unique(np.geomspace(max(n_max // 10, k0 + 1), n_max, points).astype(np.int64))
    fit = linear_fit(np.log(ns), lg[ns])
    u, _, beta = w_constants(rho)
    theta = float(np.dot(N, u) / beta)
    return GammaFit(fit.slope, fit.ci, k0, (int(ns[0]), int(ns[-1])), theta,
                    bool(np.all(np.diff(lg) >= 0)))


# --- the transform G and the coefficients a, b ---------------------------------


def bases(L: int, s: float) -> np.ndarray:
    """``(1 + l (s - 1))`` for ``l = 1..L``."""
    return 1.0 + np.arange(1, L + 1) * (s - 1.0)


def check_domain(L: int, s_grid):
    lo = (L - 1) / L
    for s in s_grid:
        if not lo < s <= 1.0:
            raise OutsideDomain(f"s = {s} is not above (L-1)/L = {lo}")


def transform_samples(z, s: float) -> np.ndarray:
    """Per-sample ``prod_l (1 + l(s-1))^{z_l}``."""
    z = np.asarray(z)
    b = bases(z.shape[1], s)
    if s == 1.0:
        return np.ones(z.shape[0])
    return np.exp(z @ np.log(b))


@dataclass
class GEvaluation:
    s: float
    G_hat: float
    G_se: float
    a_hat: float = math.nan
    a_se: float = math.nan
    b_hat: float = math.nan
    b_se: float = math.nan
    residual: float = math.nan
    residual_se: float = math.nan

    def as_dict(self):
        return dict(self.__dict__)


def estimate_G(z_samples, s_grid) -> list:
    """Ergodic averages of the transform with batch-means standard errors."""
    z_samples = np.asarray(z_samples)
    check_domain(z_samples.shape[1], s_grid)
    out = []
    for s in s_grid:
        m, se = batch_means(transform_samples(z_samples, s))
        out.append(GEvaluation(float(s), float(m), float(se)))
    return out


@dataclass
class CoefficientSamples:
    """Monte Carlo failure counts ``A(m)`` for every ``m`` the coefficients use."""

    env: CookieEnvironment
    samples: dict            # m -> (replicas, L) int array

    @classmethod
    def draw(cls, env: CookieEnvironment, replicas: int, seed: int):
        ms = sorted({env.M - 1} | set(range(0, max(env.M - 1, 0))))
        samples = {}
        for m in ms:
            stream = rng.Stream(rng.derive_key(seed, "feq-A", m))
            samples[m] = sample_A(env, m, stream, size=replicas, method="direct")
        return cls(env, samples)

    def pgf(self, m: int, s: float):
        """Mean and SE of ``prod_l (1 + l(s-1))^{A_l(m)}``."""
        x = transform_samples(self.samples[m], s)
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0

    def pgf_slope(self, m: int, h: float):
        """Central difference of ``s -> E prod (1+l(s-1))^{A(m)}`` at ``1``
        with common random numbers; returns ``(slope, se)``."""
        x = (transform_samples(self.samples[m], 1 + h) - transform_samples(self.samples[m], 1 - h)) / (2 * h)
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def small_states(env: CookieEnvironment):
    """States with ``|k| <= M - 2``."""
    return states_up_to(env.L, env.M - 2) if env.M >= 2 else []


def _shift_product(k, s):
    L = len(k)
    b = bases(L, s)
    return float(np.prod(b[: L - 1] ** np.array(k[1:], dtype=np.float64)))


def coefficients(coef: CoefficientSamples, pi: dict, s: float, pi_se: dict | None = None):
    """``(a, a_se, b, b_se)``; ``pi`` maps small states to stationary masses."""
    env = coef.env
    M = env.M
    e, e_se = coef.pgf(M - 1, s)
    a = 1.0 / (e * (2.0 - s) ** (M - 1))
    a_se = a * e_se / e
    b = 1.0 - a
    db_da = -1.0
    var_b = 0.0
    for k in small_states(env):
        m = sum(k)
        ek, ek_se = coef.pgf(m, s)
        sp = _shift_product(k, s)
        c = a * ek * sp - sp / (2.0 - s) ** m
        b += pi[k] * c
        db_da += pi[k] * ek * sp
        var_b += (pi[k] * a * sp * ek_se) ** 2
        if pi_se:
            var_b += (c * pi_se.get(k, 0.0)) ** 2
    var_b += (db_da * a_se) ** 2
    return a, a_se, b, math.sqrt(var_b)


def estimate_a_b(env: CookieEnvironment, s_grid, replicas: int, seed: int, pi: dict,
                 pi_se: dict | None = None) -> list:
    """``a(s)`` and ``b(s)`` per grid point (``G`` fields left as nan)."""
    check_domain(env.L, s_grid)
    coef = CoefficientSamples.draw(env, replicas, seed)
    out = []
    for s in s_grid:
        a, a_se, b, b_se = coefficients(coef, pi, s, pi_se)
        out.append(GEvaluation(float(s), math.nan, math.nan, a, a_se, b, b_se))
    return out


def a_slope(coef: CoefficientSamples, h: float = 1e-3):
    """Slope of ``s -> a(1 - s)`` at ``0`` by central differences with
    common random numbers; returns ``(slope, se)``."""
    M = coef.env.M
    x_lo = transform_samples(coef.samples[M - 1], 1 - h)
    x_hi = transform_samples(coef.samples[M - 1], 1 + h)
    a_lo = 1.0 / (x_lo.mean() * (1 + h) ** (M - 1))
    a_hi = 1.0 / (x_hi.mean() * (1 - h) ** (M - 1))
    slope = (a_lo - a_hi) / (2 * h)
    # delta method on the pair of means
    n = x_lo.size
    g = np.array([-a_lo / x_lo.mean(), a_hi / x_hi.mean()]) / (2 * h)
    cov = np.cov(np.vstack([x_lo, x_hi])) / n
    return float(slope), float(math.sqrt(max(g @ cov @ g, 0.0)))


def b_slope_closed_form(env: CookieEnvironment, pi: dict) -> float:
    """Slope at ``0`` of ``s -> b(1 - s)``:
    ``(delta-1) - sum_k pi_k (delta - 1 - |k| + sum_l l E A_l(|k|))``."""
    d1 = float(compute_delta(env)) - 1.0
    tot = d1
    for k in small_states(env):
        ea = expected_A(env, sum(k))
        tot -= pi[k] * (d1 - sum(k) + sum((l + 1) * float(x) for l, x in enumerate(ea)))
    return tot


def b_slope_numeric(coef: CoefficientSamples, pi: dict, h: float = 1e-3):
    """Central difference of ``s -> b(1 - s)`` at ``0``; the SE comes from the
    common-random-number samples of every pgf involved."""
    env = coef.env
    M = env.M
    lo, hi = 1 - h, 1 + h
    # b(1-s) at s=+h is b(lo); at s=-h is b(hi)
    e_lo, _ = coef.pgf(M - 1, lo)
    e_hi, _ = coef.pgf(M - 1, hi)
    a_lo = 1.0 / (e_lo * (2 - lo) ** (M - 1))
    a_hi = 1.0 / (e_hi * (2 - hi) ** (M - 1))

    def b_at(s, a):
        b = 1.0 - a
        for k in small_states(env):
            m = sum(k)
            ek, _ = coef.pgf(m, s)
            sp = _shift_product(k, s)
            b += pi[k] * (a * ek * sp - sp / (2 - s) ** m)
        return b

    slope = (b_at(lo, a_lo) - b_at(hi, a_hi)) / (2 * h)
    # SE: derivative samples of each pgf, combined linearly
    var = 0.0
    da_slope, da_se = a_slope(coef, h)
    coeff_a = -1.0 + sum(pi[k] for k in small_states(env))
    var += (coeff_a * da_se) ** 2
    for k in small_states(env):
        _, d_se = coef.pgf_slope(sum(k), h)
        var += (pi[k] * d_se) ** 2
    return float(slope), float(math.sqrt(var))


@dataclass
class FunctionalEquationReport:
    evaluations: list
    a_slope: float
    a_slope_se: float
    b_slope_numeric: float
    b_slope_numeric_se: float
    b_slope_closed: float
    delta: float
    iterations: int
    replicas: int
    pi: dict = field(default_factory=dict)

    def as_dict(self):
        return {"evaluations": [e.as_dict() for e in self.evaluations],
                "a_slope": self.a_slope, "a_slope_se": self.a_slope_se,
                "b_slope_numeric": self.b_slope_numeric, "b_slope_numeric_se": self.b_slope_numeric_se,
                "b_slope_closed": self.b_slope_closed, "delta": self.delta,
                "iterations": self.iterations, "replicas": self.replicas,
                "pi": {",".join(map(str, k)): v for k, v in self.pi.items()}}

    def write_csv(self, fh):
        w = csv.writer(fh)
        cols = ["s", "G_hat", "G_se", "a_hat", "a_se", "b_hat", "b_se", "residual", "residual_se"]
        w.writerow(cols)
        for e in self.evaluations:
            w.writerow([f"{getattr(e, c):.17g}" for c in cols])


def functional_equation_residual(env: CookieEnvironment, s_grid, iterations: int, replicas: int,
                                 seed: int, h: float = 1e-3) -> FunctionalEquationReport:
    """Residual ``1 - G(1/(2-s)) - a(s)(1 - G(s)) - b(s)`` per grid point.

    After substituting ``b`` the residual is the stationary mean of
    ``a B_s^z - B_{s'}^z - 1{|z| <= M-2} c_z`` (``B_s^z`` the transform
    factor, ``s' = 1/(2-s)``), so its chain SE comes from batch means of that
    functional; the SE of the independently estimated ``A`` pgfs is added by
    the delta method."""
    check_domain(env.L, s_grid)
    check_domain(env.L, [1.0 / (2.0 - s) for s in s_grid])
    st = estimate_stationary(env, iterations, seed, hist_level=max(env.M - 2, 0),
                             keep_samples=True, experiment="feq-chain")
    z = st.samples
    small = small_states(env)
    pi = {k: st.histogram[k][0] for k in small}
    pi_se = {k: st.histogram[k][1] for k in small}
    coef = CoefficientSamples.draw(env, replicas, seed)
    sizes = z.sum(axis=1)
    masks = {k: np.all(z == np.array(k, dtype=z.dtype), axis=1) for k in small}
    evals = []
    for s in s_grid:
        s2 = 1.0 / (2.0 - s)
        Bs = transform_samples(z, s)
        Bs2 = transform_samples(z, s2)
        G, G_se = batch_means(Bs)
        G2, _ = batch_means(Bs2)
        a, a_se, b, b_se = coefficients(coef, pi, s, pi_se)
        phi = a * Bs - Bs2
        dr_da = float(G)
        var_coef = 0.0
        for k in small:
            m = sum(k)
            ek, ek_se = coef.pgf(m, s)
            sp = _shift_product(k, s)
            c = a * ek * sp - sp / (2.0 - s) ** m
            phi = phi - c * masks[k]
            dr_da -= pi[k] * ek * sp
            var_coef += (pi[k] * a * sp * ek_se) ** 2
        r, r_chain_se = batch_means(phi)
        var_coef += (dr_da * a_se) ** 2
        r_se = math.sqrt(float(r_chain_se) ** 2 + var_coef)
        evals.append(GEvaluation(float(s), float(G), float(G_se), a, a_se, b, b_se, float(r), r_se))
    sl, sl_se = a_slope(coef, h)
    bn, bn_se = b_slope_numeric(coef, pi, h)
    bc = b_slope_closed_form(env, pi)
    return FunctionalEquationReport(evals, sl, sl_se, bn, bn_se, bc, float(compute_delta(env)),
                                    iterations, replicas, pi)
