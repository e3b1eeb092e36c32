from fractions import Fraction

import pytest
from hypothesis import strategies as st

from erwlab.environment import CookieEnvironment, JumpLaw

_RESULTS_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(criterion, ok, detail)`` records a verdict for the summary."""
    results = request.config.stash[_RESULTS_KEY]

    def record(criterion, ok, detail=""):
        results[criterion] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_RESULTS_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


# --- hypothesis strategies -----------------------------------------------------

_weights = st.integers(min_value=0, max_value=6)


@st.composite
def zero_mean_nu(draw, L):
    """A law on {-L..-1, 1} with mean zero and some backward mass."""
    w = [draw(_weights) for _ in range(L)]
    if sum(w) == 0:
        w[draw(st.integers(0, L - 1))] = 1
    fwd = sum((l + 1) * x for l, x in enumerate(w))
    tot = fwd + sum(w)
    nu = {-(l + 1): Fraction(x, tot) for l, x in enumerate(w)}
    nu[1] = Fraction(fwd, tot)
    return nu


@st.composite
def cookie_law(draw, L):
    """A law on {-L..-1, 1} with positive mean and P(+1) < 1."""
    back = [draw(_weights) for _ in range(L)]
    if sum(back) == 0:
        back[0] = 1
    fwd = sum((l + 1) * x for l, x in enumerate(back)) + 1 + draw(_weights)
    tot = fwd + sum(back)
    law = {-(l + 1): Fraction(x, tot) for l, x in enumerate(back)}
    law[1] = Fraction(fwd, tot)
    return law


@st.composite
def environments(draw, max_L=3, max_M=4):
    L = draw(st.integers(1, max_L))
    M = draw(st.integers(1, max_M))
    nu = draw(zero_mean_nu(L))
    q = tuple(JumpLaw(draw(cookie_law(L)), L) for _ in range(M))
    return CookieEnvironment(L, M, q, JumpLaw(nu, L), "random")


@st.composite
def critical_rho(draw, max_L=5):
    """Exact rho with sum_l l rho_l = 1 and rho_L > 0."""
    L = draw(st.integers(1, max_L))
    w = [draw(_weights) for _ in range(L - 1)] + [draw(st.integers(1, 6))]
    tot = sum((l + 1) * x for l, x in enumerate(w))
    return tuple(Fraction(x, tot) for x in w)
