"""Perron-Frobenius analytics of mean offspring matrices.

Matrices are indexed ``m[i, j]`` = expected number of type-``j`` children of
a type-``i`` parent.  ``u`` is the right Perron vector (``m u = u``,
``|u|_1 = 1``) and ``v`` the left one (``v^T m = v^T``, ``<u, v> = 1``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class NotPositivelyRegular(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, iterations):
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations")


class MomentUnavailable(LookupError):
    """The offspring handle has no analytic second factorial moments."""


CRITICAL_TOL = 1e-9


def positively_regular(matrix, first_try: int | None = None) -> bool:
    """True iff some power up to the Wielandt bound ``(L-1)^2 + 1`` is
    entrywise positive.  ``first_try`` is checked before the scan."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or np.any(a < 0):
        return False
    pattern = (a > 0).astype(np.int64)
    n = a.shape[0]
    bound = (n - 1) ** 2 + 1
    if first_try is not None and 1 <= first_try:
        if np.all(np.linalg.matrix_power(pattern, first_try) > 0):
            return True
    p = pattern.copy()
    for _ in range(bound):
        if np.all(p > 0):
            return True
        p = np.minimum(p @ pattern, 1)
    return False


def _power(a, tol, max_iter):
    x = np.full(a.shape[0], 1.0 / a.shape[0])
    for it in range(1, max_iter + 1):
        y = a @ x
        lam = y.sum()
        if lam <= 0:
            raise NotPositivelyRegular("power iteration collapsed to zero")
        y /= lam
        if np.abs(y - x).max() <= tol:
            return y, lam, it
        x = y
    raise NoConvergence(max_iter)


def _inverse(a, lam, x, tol, max_iter):
    """Shifted inverse iteration at ``lam`` from start ``x``; 1-norm scaling."""
    n = a.shape[0]
    shift = lam * (1.0 + 1e-9) + 1e-12
    b = a - shift * np.eye(n)
    x = x / np.abs(x).sum()
    for it in range(1, max_iter + 1):
        y = np.linalg.solve(b, x)
        y /= y.sum()
        if np.abs(y - x).max() <= tol:
            return y, it
        x = y
    raise NoConvergence(max_iter)


@dataclass
class SpectralSummary:
    mean_matrix: np.ndarray
    lambda_max: float
    u: np.ndarray
    v: np.ndarray
    second_modulus: float = math.nan
    beta: float = math.nan
    theta: float = math.nan
    iterations: int = 0

    @property
    def right_residual(self) -> float:
        return float(np.abs(self.mean_matrix @ self.u - self.lambda_max * self.u).max())

    @property
    def left_residual(self) -> float:
        return float(np.abs(self.v @ self.mean_matrix - self.lambda_max * self.v).max())

    @property
    def critical(self) -> bool:
        return abs(self.lambda_max - 1.0) <= CRITICAL_TOL

    def as_dict(self) -> dict:
        return {"mean_matrix": self.mean_matrix.tolist(), "lambda_max": self.lambda_max,
                "u": self.u.tolist(), "v": self.v.tolist(),
                "second_modulus": self.second_modulus, "beta": self.beta, "theta": self.theta,
                "right_residual": self.right_residual, "left_residual": self.left_residual}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def perron_pair(matrix, tol: float = 1e-12, max_iter: int = 100_000) -> SpectralSummary:
    """Perron root with right/left vectors normalised ``|u|_1 = 1``,
    ``<u, v> = 1``.

    Power iteration locates the root and a first ``u``; shifted inverse
    iteration then polishes ``u`` and produces ``v`` from the transpose."""
    a = np.asarray(matrix, dtype=np.float64)
    if not positively_regular(a, first_try=a.shape[0]):
        raise NotPositivelyRegular("no power of the matrix is entrywise positive")
    u, lam, it = _power(a, tol, max_iter)
    u, it_u = _inverse(a, lam, u, tol, max_iter)
    lam = float((a @ u).sum() / u.sum())
    v, it_v = _inverse(a.T, lam, np.ones_like(u), tol, max_iter)
    v = v / (u @ v)
    eig = np.sort(np.abs(np.linalg.eigvals(a)))[::-1]
    second = float(eig[1]) if eig.size > 1 else 0.0
    return SpectralSummary(a, lam, u, v, second, iterations=it + it_u + it_v)


def w_mean_matrix(rho) -> np.ndarray:
    """Mean offspring matrix of the geometric-plus-shift family:
    ``m[i, j] = rho_j + 1{j = i-1}``."""
    rho = np.asarray([float(r) for r in rho])
    m = np.tile(rho, (rho.size, 1))
    for i in range(1, rho.size):
        m[i, i - 1] += 1.0
    return m


def w_sigma(rho) -> np.ndarray:
    """Second factorial moments ``sigma[k, i, j] = E[psi_ki psi_kj - 1{i=j} psi_kj]``
    of the W family: ``2 rho_i rho_j + 1{i=k-1} rho_j + 1{j=k-1} rho_i``."""
    rho = np.asarray([float(r) for r in rho])
    L = rho.size
    s = np.empty((L, L, L))
    for k in range(L):
        s[k] = 2.0 * np.outer(rho, rho)
        if k >= 1:
            s[k, k - 1, :] += rho
            s[k, :, k - 1] += rho
    return s


def w_right_vector(L: int) -> np.ndarray:
    """Closed-form right Perron vector ``2/(L(L+1)) (1, ..., L)``."""
    return 2.0 * np.arange(1, L + 1) / (L * (L + 1))


def contract_beta(sigma, u, v) -> float:
    return 0.5 * float(np.einsum("k,i,kij,j->", v, u, sigma, u))


@dataclass
class MomentReport:
    sigma: np.ndarray
    sigma_se: np.ndarray
    beta: float
    beta_se: float
    theta: float
    source: str  # "analytic" or "monte-carlo"

    def as_dict(self):
        return {"sigma": self.sigma.tolist(), "sigma_se": self.sigma_se.tolist(),
                "beta": self.beta, "beta_se": self.beta_se, "theta": self.theta,
                "source": self.source}


def mc_sigma(offspring, samples: int, seed: int):
    """Monte Carlo second factorial moments with standard errors."""
    L = offspring.L
    sig = np.empty((L, L, L))
    se = np.empty((L, L, L))
    for k in range(L):
        rows = offspring.sample_rows(k, samples, seed).astype(np.float64)
        for i in range(L):
            for j in range(L):
                x = rows[:, i] * rows[:, j] - (rows[:, j] if i == j else 0.0)
                sig[k, i, j] = x.mean()
                se[k, i, j] = x.std(ddof=1) / math.sqrt(samples)
    return sig, se


def sigma_beta_theta(offspring, N, u, v, mc_samples: int = 200_000, seed: int = 0,
                     force_monte_carlo: bool = False) -> MomentReport:
    """``sigma``, ``beta = 1/2 sum v_k u_i sigma_ij(k) u_j`` and
    ``theta = <N, u> / beta``.

    Uses the handle's analytic moments; when it raises
    :class:`MomentUnavailable` (or on request) the moments are estimated by
    Monte Carlo and ``beta_se`` is propagated linearly."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    try:
        if force_monte_carlo:
            raise MomentUnavailable
        sigma = np.asarray(offspring.factorial_moments(), dtype=np.float64)
        se = np.zeros_like(sigma)
        source = "analytic"
    except MomentUnavailable:
        sigma, se = mc_sigma(offspring, mc_samples, seed)
        source = "monte-carlo"
    beta = contract_beta(sigma, u, v)
    w = 0.5 * np.einsum("k,i,j->kij", v, u, u)
    beta_se = float(math.sqrt(np.sum((w * se) ** 2)))
    theta = float(np.dot(np.asarray(N, dtype=np.float64), u) / beta)
    return MomentReport(sigma, se, beta, beta_se, theta, source)


def summarize(matrix, offspring=None, N=None) -> SpectralSummary:
    """:func:`perron_pair` plus ``beta`` and ``theta`` when a handle and
    ``N`` are given."""
    s = perron_pair(matrix)
    if offspring is not None:
        rep = sigma_beta_theta(offspring, N if N is not None else np.ones(s.u.size), s.u, s.v)
        s.beta = rep.beta
        s.theta = rep.theta if N is not None else math.nan
    return s


# --- characteristic polynomial ----------------------------------------------


def char_poly_coefficients(rho) -> list:
    """Coefficients (highest degree first) of
    ``(-1)^L (lambda^L - sum_{j<L} (sum_{l >= L-j} rho_l) lambda^j)``."""
    L = len(rho)
    sign = -1 if L % 2 else 1
    coeffs = [sign * Fraction(1) if isinstance(rho[0], Fraction) else float(sign)]
    for j in range(L - 1, -1, -1):
        tail = sum(rho[L - j - 1:])
        coeffs.append(-sign * tail)
    return coeffs


def char_poly(rho, lam):
    """Closed form of ``det(m - lambda I)`` for the W mean matrix."""
    val = 0
    for c in char_poly_coefficients(rho):
        val = val * lam + c
    return val


@dataclass
class CharPolyReport:
    residual: float
    phi_at_one: object
    roots: list
    max_root_modulus: float

    @property
    def ok(self) -> bool:
        return (self.residual <= 1e-10 and abs(self.phi_at_one) <= 1e-12
                and self.max_root_modulus <= 1 + 1e-9)

    def as_dict(self):
        return {"residual": self.residual, "phi_at_one": float(self.phi_at_one),
                "roots": [[r.real, r.imag] for r in self.roots],
                "max_root_modulus": self.max_root_modulus, "ok": self.ok}


def char_poly_check(rho, grid=None) -> CharPolyReport:
    """Compare the closed form with an LU determinant of ``m - lambda I`` on a
    grid of real ``lambda``; also report ``Phi(1)`` (exact for rational
    ``rho``) and the root moduli."""
    m = w_mean_matrix(rho)
    grid = np.linspace(-1.5, 1.5, 61) if grid is None else np.asarray(grid, dtype=np.float64)
    eye = np.eye(m.shape[0])
    fl = [float(r) for r in rho]
    resid = max(abs(np.linalg.det(m - lam * eye) - char_poly(fl, lam)) for lam in grid)
    roots = np.roots([float(c) for c in char_poly_coefficients(fl)])
    phi1 = char_poly(list(rho), 1)
    return CharPolyReport(float(resid), phi1, sorted(roots.tolist(), key=lambda z: -abs(z)),
                          float(np.abs(roots).max()))


def read_matrix_csv(path) -> np.ndarray:
    """Square nonnegative matrix from a comma-separated file (``#`` comments)."""
    a = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is {a.shape[0]}x{a.shape[1]}, expected square")
    if np.any(a < 0):
        raise ValueError("mean matrix has negative entries")
    return a
