"""Cookie environments of the (L,1) excited random walk.

A site starts with ``M`` cookies.  On its ``j``-th visit (``j <= M``) the walk
jumps by ``i`` with probability ``q_j(i)``; after the cookies are gone it uses
the zero-mean law ``nu``.  Jumps take values in ``{-L, ..., -1, +1}``.

Probabilities are kept exactly as given: ``Fraction`` for integer and
``"p/q"`` input, ``float`` for decimals.  Identities are checked exactly when
every probability involved is a ``Fraction`` and to ``1e-12`` otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from numbers import Rational

import numpy as np

TOL = 1e-12


class InvalidEnvironment(ValueError):
    """Raised with the full list of violated invariants."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class ZeroForwardMass(ValueError):
    pass


class NegativeDelta(ValueError):
    pass


@dataclass(frozen=True)
class Issue:
    code: str  # NonzeroNuMean, ZeroForwardMass, NonpositiveCookieDrift, DegenerateCookie, BadSimplex, SupportOutOfRange, BadShape
    where: str = ""

    def __str__(self):
        return f"{self.code}({self.where})" if self.where else self.code


def as_probability(value):
    """Coerce a probability: ints, Fractions and ``"p/q"`` strings stay exact,
    decimal strings and floats become ``float``."""
    if isinstance(value, bool):
        raise TypeError("bool is not a probability")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        s = value.strip()
        if any(c in s for c in ".eE") and "/" not in s:
            return float(s)
        return Fraction(s)  # ZeroDivisionError / ValueError on malformed input
    raise TypeError(f"cannot interpret {value!r} as a probability")


def _is_zero(x, exact):
    return x == 0 if exact else abs(x) <= TOL


@dataclass(frozen=True)
class JumpLaw:
    """A probability law on ``{-L, ..., -1, +1}``."""

    probs: dict
    L: int

    def __post_init__(self):
        object.__setattr__(self, "probs", {int(k): as_probability(v) for k, v in self.probs.items()})

    @property
    def exact(self) -> bool:
        return all(isinstance(p, Fraction) for p in self.probs.values())

    def __getitem__(self, jump):
        return self.probs.get(jump, Fraction(0))

    @property
    def support(self):
        return {k for k, p in self.probs.items() if p != 0}

    def mean(self):
        return sum((k * p for k, p in self.probs.items()), Fraction(0))

    def issues(self, name: str):
        out = []
        allowed = set(range(-self.L, 0)) | {1}
        if any(k not in allowed for k, p in self.probs.items() if p != 0):
            out.append(Issue("SupportOutOfRange", name))
        total = sum(self.probs.values(), Fraction(0))
        if any(p < 0 for p in self.probs.values()) or not _is_zero(total - 1, self.exact):
            out.append(Issue("BadSimplex", name))
        return out

    def row(self) -> np.ndarray:
        """``[P(-1), ..., P(-L), P(+1)]`` as float64."""
        return np.array([float(self[-l]) for l in range(1, self.L + 1)] + [float(self[1])])


@dataclass(frozen=True)
class CookieEnvironment:
    L: int
    M: int
    q: tuple
    nu: JumpLaw
    name: str = field(default="", compare=False)

    def __post_init__(self):
        q = tuple(x if isinstance(x, JumpLaw) else JumpLaw(x, self.L) for x in self.q)
        object.__setattr__(self, "q", q)
        if not isinstance(self.nu, JumpLaw):
            object.__setattr__(self, "nu", JumpLaw(self.nu, self.L))

    @property
    def exact(self) -> bool:
        return self.nu.exact and all(law.exact for law in self.q)

    def law(self, visit: int) -> JumpLaw:
        """Jump law used on the ``visit``-th visit to a site (1-based)."""
        return self.q[visit - 1] if visit <= self.M else self.nu

    def with_cookies(self, q) -> "CookieEnvironment":
        return CookieEnvironment(self.L, len(q), tuple(q), self.nu, self.name)

    @cached_property
    def trial_table(self) -> np.ndarray:
        """``(M+1, L+1)`` float array; row ``j < M`` is cookie ``j+1``, row ``M``
        is ``nu``; columns are failure types 1..L then success."""
        return np.vstack([law.row() for law in self.q] + [self.nu.row()])

    @cached_property
    def trial_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.trial_table, axis=1)
        cdf[:, -1] = 1.0
        return cdf

    def canonical(self) -> str:
        """Stable text form used for config hashing; zero entries are dropped."""
        def fmt(law):
            return ",".join(f"{k}:{law.probs[k]}" for k in sorted(law.probs) if law.probs[k] != 0)
        lines = [f"L={self.L}", f"M={self.M}", f"nu={fmt(self.nu)}"]
        lines += [f"q{j + 1}={fmt(law)}" for j, law in enumerate(self.q)]
        return "\n".join(lines)


def environment_issues(env: CookieEnvironment) -> list:
    issues = []
    if env.L < 1 or env.M < 1 or len(env.q) != env.M:
        issues.append(Issue("BadShape", f"L={env.L}, M={env.M}, cookies={len(env.q)}"))
    issues += env.nu.issues("nu")
    if not _is_zero(env.nu.mean(), env.nu.exact):
        issues.append(Issue("NonzeroNuMean"))
    if env.nu[1] == 0 or not any(env.nu[-l] != 0 for l in range(1, env.L + 1)):
        issues.append(Issue("ZeroForwardMass"))
    for j, law in enumerate(env.q, start=1):
        issues += law.issues(f"q{j}")
        m = law.mean()
        if m <= 0 or (not law.exact and m <= TOL):
            issues.append(Issue("NonpositiveCookieDrift", f"q{j}"))
        if law[1] == 1:
            issues.append(Issue("DegenerateCookie", f"q{j}"))
    return issues


def validate_environment(env: CookieEnvironment) -> CookieEnvironment:
    """Return ``env`` unchanged, or raise :class:`InvalidEnvironment` listing
    every violated invariant."""
    issues = environment_issues(env)
    if issues:
        raise InvalidEnvironment(issues)
    return env


def compute_delta(env: CookieEnvironment):
    """Expected total drift: the sum of the cookie means."""
    return sum((law.mean() for law in env.q), Fraction(0))


class Regime(enum.Enum):
    RECURRENT = "Recurrent"
    TRANSIENT_ZERO_SPEED = "TransientZeroSpeed"
    BALLISTIC = "Ballistic"


@dataclass(frozen=True)
class RegimeLabel:
    regime: Regime
    delta: float

    @property
    def label(self) -> str:
        return self.regime.value


def classify_regime(delta) -> RegimeLabel:
    """[0,1] recurrent, (1,2] transient with zero speed, (2,inf) ballistic."""
    if delta < 0:
        raise NegativeDelta(delta)
    if delta <= 1:
        r = Regime.RECURRENT
    elif delta <= 2:
        r = Regime.TRANSIENT_ZERO_SPEED
    else:
        r = Regime.BALLISTIC
    return RegimeLabel(r, float(delta))


def rho_vector(env: CookieEnvironment) -> tuple:
    """``rho_l = nu(-l) / nu(1)`` for ``l = 1..L``."""
    fwd = env.nu[1]
    if fwd == 0:
        raise ZeroForwardMass("nu(1) = 0")
    return tuple(env.nu[-l] / fwd for l in range(1, env.L + 1))


def make_environment(L, nu, q, name=""):
    """Convenience constructor from plain dicts; validates."""
    q = tuple(JumpLaw(law, L) for law in q)
    return validate_environment(CookieEnvironment(L, len(q), q, JumpLaw(nu, L), name))


_NU_A = {-2: "1/5", -1: "1/5", 1: "3/5"}
_Q_A = {1: "9/10", -1: "1/10", -2: 0}

#: L=2, three cookies of drift 4/5 each (delta = 12/5).
ENV_A = make_environment(2, _NU_A, [_Q_A] * 3, "ENV-A")
#: ENV-A with two cookies (delta = 8/5).
ENV_B = make_environment(2, _NU_A, [_Q_A] * 2, "ENV-B")
#: a single cookie with drift 4/5 (recurrent, delta = 4/5).
ENV_C = make_environment(2, _NU_A, [{1: "9/10", -1: "1/10"}], "ENV-C")
#: ENV-A's nu with cookies tuned to delta = 2 exactly.
ENV_CRITICAL = make_environment(2, _NU_A, [{1: "5/6", -1: "1/6"}] * 3, "ENV-DELTA2")
