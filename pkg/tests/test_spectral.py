from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erwlab.emigration import MomentsOnly, TableOffspring, WOffspring
from erwlab.spectral import (NotPositivelyRegular, char_poly, char_poly_check, char_poly_coefficients,
                             contract_beta, perron_pair, positively_regular, read_matrix_csv,
                             sigma_beta_theta, summarize, w_mean_matrix, w_right_vector, w_sigma)

from conftest import critical_rho

THIRD = (Fraction(1, 3), Fraction(1, 3))


def test_two_type_constants():
    s = perron_pair(w_mean_matrix(THIRD))
    assert np.allclose(s.u, [1 / 3, 2 / 3], atol=1e-12)
    assert np.allclose(s.v, [1.5, 0.75], atol=1e-10)
    assert s.lambda_max == pytest.approx(1.0, abs=1e-12)
    assert s.critical and s.second_modulus == pytest.approx(1 / 3)
    rep = sigma_beta_theta(WOffspring(THIRD), (1, 1), s.u, s.v)
    assert rep.beta == pytest.approx(1 / 3) and rep.theta == pytest.approx(3.0)


@pytest.mark.parametrize("a, expected", [
    (np.eye(2), False),
    (np.array([[0, 1], [1, 0]]), False),
    (np.array([[1.0]]), True),
    (np.array([[0, 1], [1, 1]]), True),
    (np.array([[0, 1, 0], [0, 0, 1], [1, 1, 0]]), True),
])
def test_positively_regular(a, expected):
    assert positively_regular(a) is expected


def test_perron_rejects_reducible():
    with pytest.raises(NotPositivelyRegular):
        perron_pair(np.eye(2))


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(0, 2**32))
def test_perron_pair_against_dense_eigensolver(n, seed):
    a = np.random.default_rng(seed).random((n, n)) + 0.01
    s = perron_pair(a)
    w, V = np.linalg.eig(a)
    k = np.argmax(w.real)
    u = np.abs(V[:, k].real)
    assert s.lambda_max == pytest.approx(w[k].real, rel=1e-10)
    assert np.allclose(s.u, u / u.sum(), atol=1e-10)
    assert s.right_residual < 1e-10 and s.left_residual < 1e-10
    assert s.u @ s.v == pytest.approx(1.0)


@settings(max_examples=40)
@given(critical_rho())
def test_w_family_is_critical_with_closed_form_u(rho):
    s = perron_pair(w_mean_matrix(rho))
    assert abs(s.lambda_max - 1) <= 1e-9
    assert np.abs(s.u - w_right_vector(len(rho))).max() <= 1e-10
    rep = char_poly_check(rho)
    assert rep.phi_at_one == 0
    assert rep.residual <= 1e-10 and rep.max_root_modulus <= 1 + 1e-9


def test_char_poly_coefficients_three_types():
    rho = (Fraction(0), Fraction(0), Fraction(1, 3))
    assert char_poly_coefficients(rho) == [-1, Fraction(1, 3), Fraction(1, 3), Fraction(1, 3)]
    assert char_poly(rho, 1) == 0


def test_monte_carlo_moments_agree_with_analytic():
    off = WOffspring(THIRD)
    s = perron_pair(off.mean_matrix())
    exact = sigma_beta_theta(off, (1, 1), s.u, s.v)
    mc = sigma_beta_theta(MomentsOnly(off), (1, 1), s.u, s.v, mc_samples=400_000, seed=3)
    assert mc.source == "monte-carlo" and exact.source == "analytic"
    assert np.all(np.abs(mc.sigma - exact.sigma) <= 4 * mc.sigma_se + 1e-12)
    assert abs(mc.beta - exact.beta) <= 4 * mc.beta_se


def test_table_offspring_moments():
    # type 0: (0,0) or (2,1) with prob 1/2; type 1: always (1,0)
    off = TableOffspring([([[0, 0], [2, 1]], [0.5, 0.5]), ([[1, 0]], [1.0])])
    assert np.allclose(off.mean_matrix(), [[1.0, 0.5], [1.0, 0.0]])
    sig = off.factorial_moments()
    assert sig[0, 0, 0] == pytest.approx(0.5 * 2 * 1)
    assert sig[0, 0, 1] == pytest.approx(0.5 * 2 * 1)
    assert np.all(sig[1] == 0)


def test_w_sigma_matches_samples():
    off = WOffspring(THIRD)
    rows = off.sample_rows(1, 400_000, 11).astype(float)
    emp = np.array([[np.mean(rows[:, i] * rows[:, j] - (rows[:, j] if i == j else 0)) for j in range(2)]
                    for i in range(2)])
    assert np.allclose(emp, w_sigma(THIRD)[1], atol=0.02)


def test_contract_beta_scalar():
    assert contract_beta(np.array([[[2.0]]]), [1.0], [1.0]) == 1.0


def test_summarize_and_json(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("# mean matrix\n0.3333333333333333,0.3333333333333333\n1.3333333333333333,0.3333333333333333\n")
    s = summarize(read_matrix_csv(p), WOffspring(THIRD), (1, 1))
    assert s.theta == pytest.approx(3.0)
    assert '"lambda_max"' in s.to_json()


def test_read_matrix_rejects_bad_shape(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2\n")
    with pytest.raises(ValueError):
        read_matrix_csv(p)
