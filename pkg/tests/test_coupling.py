import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscalib.coupling import (
    ImpedanceMatrix,
    coupled_cascade_operator,
    coupled_ris_operator,
    mutual_impedance,
    mutual_impedance_matrix,
    noisy_calibration,
    s_to_z,
    self_impedance,
    z_to_s,
)
from riscalib.geometry import ArrayLayout

LAM = 0.01


def _random_symmetric(n, seed, scale=30.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 70.0 * np.eye(n) + scale * (A + A.T) / 2


def test_single_element_is_self_impedance():
    Z = mutual_impedance_matrix(ArrayLayout(1, 1, LAM / 2), LAM)
    assert Z.Z.shape == (1, 1)
    assert Z.Z[0, 0] == self_impedance(0.48 * LAM, LAM, LAM / 2000)


def test_self_impedance_of_half_wave_dipole():
    # classical thin half-wave dipole: about 73 + j42.5 ohm
    z = self_impedance(0.5 * LAM, LAM, 1e-6 * LAM)
    assert z.real == pytest.approx(73.1, abs=0.5)
    assert z.imag == pytest.approx(42.5, abs=1.5)


def test_mutual_impedance_half_wave_reference():
    # side-by-side half-wave dipoles at lambda/2: about -12.5 - j29.9 ohm
    z = mutual_impedance(0.5 * LAM, 0.5 * LAM, LAM)
    assert z.real == pytest.approx(-12.5, abs=0.5)
    assert z.imag == pytest.approx(-29.9, abs=0.5)


def test_impedance_matrix_reciprocal():
    Z = mutual_impedance_matrix(ArrayLayout(3, 4, LAM / 4), LAM).Z
    np.testing.assert_allclose(Z, Z.T, rtol=1e-12)


def test_mutual_impedance_decays_with_distance():
    d = np.linspace(LAM / 16, LAM, 16)
    mag = np.abs([mutual_impedance(x, 0.48 * LAM, LAM) for x in d])
    assert np.all(np.diff(mag) <= 0)
    assert abs(mutual_impedance(LAM / 2, 0.48 * LAM, LAM)) <= abs(mutual_impedance(LAM / 8, 0.48 * LAM, LAM))


def test_zero_spacing_rejected():
    pos = np.zeros((2, 3))
    with pytest.raises(ValueError):
        mutual_impedance_matrix(pos, LAM)
    with pytest.raises(ValueError):
        ArrayLayout(2, 2, 0.0)


def test_matched_network_has_no_reflection():
    S = z_to_s(ImpedanceMatrix(50.0 * np.eye(4), 50.0))
    assert np.max(np.abs(S)) < 1e-15


def test_decoupled_ports():
    z = np.array([30 + 5j, 80 - 20j, 50 + 0j])
    S = z_to_s(np.diag(z), 50.0)
    np.testing.assert_allclose(S, np.diag((z - 50) / (z + 50)), atol=1e-15)


@given(st.integers(1, 12), st.integers(0, 10_000))
@settings(max_examples=30)
def test_z_s_round_trip(n, seed):
    Z = _random_symmetric(n, seed)
    back = s_to_z(z_to_s(Z, 50.0), 50.0)
    assert np.linalg.norm(back - Z) / np.linalg.norm(Z) < 1e-9


def test_passive_dipole_array_scatter_norm():
    S = z_to_s(mutual_impedance_matrix(ArrayLayout(4, 4, LAM / 4), LAM))
    assert np.linalg.norm(S, 2) <= 1 + 1e-6


def test_singular_conversion_reported():
    with pytest.raises(np.linalg.LinAlgError):
        z_to_s(-50.0 * np.eye(2), 50.0)


def test_operator_without_coupling_is_diagonal():
    g = np.exp(1j * np.arange(5))
    assert np.max(np.abs(coupled_ris_operator(g, np.zeros((5, 5))) - np.diag(g))) < 1e-15
    assert np.array_equal(coupled_ris_operator(g, None), np.diag(g))


def test_operator_first_order_expansion():
    rng = np.random.default_rng(1)
    n = 6
    g = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    S0 = 0.3 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    G = np.diag(g)
    err = []
    for s in (0.1, 0.01):
        S = s * S0
        err.append(np.linalg.norm(coupled_ris_operator(g, S) - (G + G @ S @ G)))
    assert err[0] / err[1] == pytest.approx(100.0, rel=0.05)


def test_operator_two_by_two_closed_form():
    g1, g2 = 0.8 * np.exp(0.3j), np.exp(-1.1j)
    s11, s12, s21, s22 = 0.1 + 0.2j, -0.15 + 0.05j, 0.07 - 0.3j, -0.2 + 0.1j
    S = np.array([[s11, s12], [s21, s22]])
    # (I - S Gamma) and its inverse, written out by hand
    a, b = 1 - s11 * g1, -s12 * g2
    c, d = -s21 * g1, 1 - s22 * g2
    det = a * d - b * c
    inv = np.array([[d, -b], [-c, a]]) / det
    ref = np.diag([g1, g2]) @ inv
    np.testing.assert_allclose(coupled_ris_operator([g1, g2], S), ref, atol=1e-12, rtol=0)


def test_cascade_operator_adds_port_factors():
    rng = np.random.default_rng(2)
    n = 4
    g = np.exp(1j * rng.uniform(0, 6, n))
    S = 0.2 * rng.standard_normal((n, n))
    S = (S + S.T) / 2
    P = np.eye(n) - S
    np.testing.assert_allclose(coupled_cascade_operator(g, S), P @ coupled_ris_operator(g, S) @ P, atol=1e-14)
    assert np.array_equal(coupled_cascade_operator(g, None), np.diag(g))


def test_calibration_zero_sigma_exact():
    S = z_to_s(mutual_impedance_matrix(ArrayLayout(2, 2, LAM / 4), LAM))
    assert np.array_equal(noisy_calibration(S, 0.0, 3).S_hat, S)


def test_calibration_error_moment_and_seed():
    rng = np.random.default_rng(0)
    S = rng.standard_normal((100, 100)) + 1j * rng.standard_normal((100, 100))
    sigma = 0.01
    cal = noisy_calibration(S, sigma, 42)
    rel = np.abs(cal.S_hat - S) / np.abs(S)
    # |w| of a standard complex Gaussian is Rayleigh with mean sqrt(pi)/2
    assert rel.mean() == pytest.approx(sigma * np.sqrt(np.pi) / 2, rel=0.03)
    assert np.array_equal(cal.S_hat, noisy_calibration(S, sigma, 42).S_hat)
    with pytest.raises(ValueError):
        noisy_calibration(S, -0.1, 0)
