import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from riscalib.channel import (
    AmplitudeModel,
    CascadeModel,
    FailureMask,
    Observation,
    RisPanel,
    SignalSpec,
    add_noise,
    apply_failure,
    cascade_gain,
    cascade_mean,
    noise_variance,
    phase_amp_coefficient,
    positional_beam,
    random_profiles,
    sample_failure_mask,
    sample_snr_db,
    tx_power_for_snr,
)
from riscalib.geometry import ArrayLayout, Pose, nearfield_response, rot_zyx


def test_noise_variance_figure2_values():
    spec = SignalSpec()
    # -173.855 dBm/Hz + 10 dB in W/Hz, times the subcarrier spacing
    expected = 10 ** (-16.3855) * 1e-3 * (400e6 / 3000)
    assert noise_variance(spec) == pytest.approx(expected, rel=1e-12)
    assert noise_variance(spec) == pytest.approx(5.4506e-15, rel=1e-4)


def test_noise_variance_unit_conversion():
    spec = SignalSpec(bandwidth_hz=1.0, n_subcarriers=1, noise_psd_dbm_hz=0.0, noise_figure_db=0.0)
    assert noise_variance(spec) == pytest.approx(1e-3, rel=1e-15)


def test_noise_variance_halves_with_more_subcarriers():
    a = SignalSpec(n_subcarriers=300)
    assert noise_variance(replace(a, n_subcarriers=600)) == pytest.approx(noise_variance(a) / 2, rel=1e-15)


def test_signal_spec_validation():
    with pytest.raises(ValueError):
        SignalSpec(bandwidth_hz=0.0)
    with pytest.raises(ValueError):
        SignalSpec(n_subcarriers=0)


def test_zero_power_gives_zero_mean(small_spec, small_ris, bs_pose, ue_pos):
    spec = small_spec.with_power(-np.inf)
    W = random_profiles(small_ris.n_elements, spec.n_transmissions, 1)
    assert not np.any(cascade_mean(bs_pose, ue_pos, small_ris, spec, W).samples)


def test_single_element_constant_magnitude(small_spec, bs_pose, ue_pos):
    ris = RisPanel(ArrayLayout(1, 1, 0.005), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))
    obs = cascade_mean(bs_pose, ue_pos, ris, small_spec, np.ones((small_spec.n_transmissions, 1)))
    mag = np.abs(obs.samples)
    np.testing.assert_allclose(mag, mag[0, 0], rtol=1e-12)


def test_cophased_gain_over_random_profiles(small_spec, bs_pose, ue_pos):
    lam = small_spec.wavelength
    ris = RisPanel(ArrayLayout(8, 8, lam / 2), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))
    N = ris.n_elements
    E = ris.elements()
    beam = positional_beam(ue_pos, bs_pose, ris, lam)
    W = random_profiles(N, 2000, 7)
    model = CascadeModel(bs_pose, ris, small_spec, np.vstack([beam, W]))
    inner = model.spatial(ue_pos)[:, 0]
    # brute force: sum of per-element two-hop phasors
    a_in = [np.exp(-2j * np.pi * (np.linalg.norm(e - bs_pose.position) - np.linalg.norm(ris.centroid - bs_pose.position)) / lam) for e in E]
    a_out = [np.exp(-2j * np.pi * (np.linalg.norm(e - ue_pos) - np.linalg.norm(ris.centroid - ue_pos)) / lam) for e in E]
    brute = np.array([sum(w[n] * a_in[n] * a_out[n] for n in range(N)) for w in np.vstack([beam, W[:5]])])
    np.testing.assert_allclose(inner[:6], brute, rtol=1e-10, atol=1e-10)
    ratio = abs(inner[0]) ** 2 / np.mean(np.abs(inner[1:]) ** 2)
    assert ratio == pytest.approx(N, rel=0.1)


def test_mean_linear_in_amplitude(small_spec, small_ris, bs_pose, ue_pos):
    W = random_profiles(small_ris.n_elements, small_spec.n_transmissions, 3)
    a = cascade_mean(bs_pose, ue_pos, small_ris, small_spec, W).samples
    b = cascade_mean(bs_pose, ue_pos, small_ris, small_spec.with_power(small_spec.tx_power_dbm + 10 * np.log10(4)), W).samples
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_zero_profile_gives_zero_mean(small_spec, small_ris, bs_pose, ue_pos):
    W = np.zeros((small_spec.n_transmissions, small_ris.n_elements), complex)
    assert not np.any(cascade_mean(bs_pose, ue_pos, small_ris, small_spec, W).samples)


def test_mean_shape_and_delay(small_spec, small_ris, bs_pose, ue_pos):
    W = random_profiles(small_ris.n_elements, small_spec.n_transmissions, 3)
    y = cascade_mean(bs_pose, ue_pos, small_ris, small_spec, W).samples
    assert y.shape == (small_spec.n_subcarriers, small_spec.n_transmissions)
    # consecutive subcarriers differ by the delay phase only
    tau = (np.linalg.norm(bs_pose.position - small_ris.centroid) + np.linalg.norm(ue_pos - small_ris.centroid)) / 299_792_458.0
    np.testing.assert_allclose(y[1] / y[0], np.exp(-2j * np.pi * small_spec.subcarrier_spacing * tau), rtol=1e-9)


def test_gain_is_free_space_two_hop(small_spec, small_ris, bs_pose, ue_pos):
    ris = small_ris.with_(pattern_exponent=0.0)
    d1 = np.linalg.norm(bs_pose.position - ris.centroid)
    d2 = np.linalg.norm(ue_pos - ris.centroid)
    lam = small_spec.wavelength
    expected = np.sqrt(small_spec.tx_power_w / small_spec.n_subcarriers) * lam**2 / ((4 * np.pi) ** 2 * d1 * d2)
    assert cascade_gain(bs_pose.position, ue_pos, ris, small_spec) == pytest.approx(expected, rel=1e-12)


def test_tx_power_for_snr_round_trip(small_spec, small_ris, bs_pose, ue_pos):
    p = tx_power_for_snr(bs_pose, ue_pos, small_ris, small_spec, 12.5)
    assert sample_snr_db(bs_pose, ue_pos, small_ris, small_spec.with_power(p)) == pytest.approx(12.5, abs=1e-9)


def test_add_noise_zero_variance():
    obs = Observation(np.arange(6, dtype=complex).reshape(3, 2), 0.0)
    assert np.array_equal(add_noise(obs, 1).samples, obs.samples)


def test_add_noise_moments_and_seed():
    obs = Observation(np.zeros((1000, 100), complex), 2.5)
    a = add_noise(obs, 11).samples
    assert np.mean(np.abs(a) ** 2) == pytest.approx(2.5, rel=0.02)
    assert np.var(a.real) == pytest.approx(1.25, rel=0.02)
    assert np.array_equal(a, add_noise(obs, 11).samples)


def test_amplitude_model_limits():
    th = np.linspace(-np.pi, np.pi, 37)
    np.testing.assert_allclose(np.abs(phase_amp_coefficient(th, AmplitudeModel(beta_min=1.0))), 1.0)
    m = AmplitudeModel()
    assert abs(phase_amp_coefficient(m.phi + np.pi / 2, m)) == pytest.approx(1.0, abs=1e-12)
    assert abs(phase_amp_coefficient(m.phi - np.pi / 2, m)) == pytest.approx(m.beta_min, abs=1e-12)
    assert np.angle(phase_amp_coefficient(0.7, m)) == pytest.approx(0.7)


@given(st.floats(-10, 10), st.floats(0, 1), st.floats(0, 3))
def test_amplitude_bounded(theta, bmin, kappa):
    b = abs(phase_amp_coefficient(theta, AmplitudeModel(bmin, 0.43 * np.pi, kappa)))
    assert bmin - 1e-12 <= b <= 1 + 1e-12


def test_failure_mask_degenerate_probabilities():
    assert sample_failure_mask(100, 0.0, 1).n_failed == 0
    m = sample_failure_mask(100, 1.0, 1)
    assert m.n_failed == 100
    np.testing.assert_allclose(np.abs(m.stuck), 1.0)
    assert not np.any(sample_failure_mask(100, 1.0, 1, stuck="zero").stuck)


def test_failure_frequency():
    rng = np.random.SeedSequence(5).spawn(10_000)
    frac = np.mean([sample_failure_mask(400, 0.01, s).n_failed / 400 for s in rng])
    assert abs(frac - 0.01) < 0.001


def test_failure_probability_validated():
    with pytest.raises(ValueError):
        sample_failure_mask(10, 1.5, 0)


def test_apply_failure_cases():
    W = random_profiles(64, 3, 2)
    np.testing.assert_array_equal(apply_failure(W, FailureMask.healthy(64)), W)
    dead = FailureMask(np.ones(64, bool), np.zeros(64, complex))
    assert not np.any(apply_failure(W, dead))
    failed = np.zeros(64, bool)
    failed[17] = True
    one = FailureMask(failed, np.where(failed, 1j, 0))
    diff = apply_failure(W[0], one) != W[0]
    assert diff.sum() == 1 and diff[17]
    with pytest.raises(ValueError):
        apply_failure(W[:, :10], one)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
@settings(max_examples=30)
def test_apply_failure_idempotent(seed, p):
    m = sample_failure_mask(50, p, seed)
    W = random_profiles(50, 2, seed)
    once = apply_failure(W, m)
    np.testing.assert_array_equal(apply_failure(once, m), once)


def test_positional_beam_peaks_at_its_target(small_spec, bs_pose, ue_pos):
    lam = small_spec.wavelength
    ris = RisPanel(ArrayLayout(8, 8, lam / 2), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))
    targets = [ue_pos, ue_pos + [0.2, 0, 0], ue_pos + [0, 0.3, 0], ue_pos + [0, 0, 0.5], ue_pos + [-0.4, 0.4, 0.1]]
    model = CascadeModel(bs_pose, ris, small_spec, [positional_beam(t, bs_pose, ris, lam) for t in targets])
    power = np.abs(model.spatial(ue_pos)[:, 0]) ** 2
    assert np.argmax(power) == 0
    assert np.all(power[0] > power[1:])
    np.testing.assert_allclose(np.abs(positional_beam(ue_pos, bs_pose, ris, lam)), 1.0)


def test_single_element_beam_irrelevant(small_spec, bs_pose, ue_pos):
    ris = RisPanel(ArrayLayout(1, 1, 0.005), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))
    model = CascadeModel(bs_pose, ris, small_spec, np.exp(1j * np.linspace(0, 6, 7))[:, None])
    np.testing.assert_allclose(np.abs(model.spatial(ue_pos)), 1.0, rtol=1e-12)


def test_beam_power_grows_quadratically(small_spec, bs_pose, ue_pos):
    lam = small_spec.wavelength
    out = []
    for n in (4, 8):
        ris = RisPanel(ArrayLayout(n, n, lam / 2), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))
        model = CascadeModel(bs_pose, ris, small_spec, positional_beam(ue_pos, bs_pose, ris, lam))
        out.append(abs(model.spatial(ue_pos)[0, 0]) ** 2)
    assert out[1] / out[0] == pytest.approx(16.0, rel=1e-9)


def test_beam_beats_random_profiles(small_spec, small_ris, bs_pose, ue_pos):
    lam = small_spec.wavelength
    W = random_profiles(small_ris.n_elements, 100, 9)
    model = CascadeModel(bs_pose, small_ris, small_spec, np.vstack([positional_beam(ue_pos, bs_pose, small_ris, lam), W]))
    p = np.abs(model.spatial(ue_pos)[:, 0]) ** 2
    rand = p[1:]
    assert p[0] >= rand.mean() + 3 * rand.std() / np.sqrt(rand.size)


def test_random_profiles_properties():
    W = random_profiles(10, 10_000, 4)
    np.testing.assert_allclose(np.abs(W), 1.0)
    assert np.array_equal(W, random_profiles(10, 10_000, 4))
    assert abs(W.mean()) < 0.02
    with pytest.raises(ValueError):
        random_profiles(0, 3)


def test_coupled_panel_reduces_to_diagonal(small_spec, small_ris, bs_pose, ue_pos):
    W = random_profiles(small_ris.n_elements, small_spec.n_transmissions, 3)
    zero = np.zeros((small_ris.n_elements,) * 2, complex)
    a = cascade_mean(bs_pose, ue_pos, small_ris, small_spec, W).samples
    b = cascade_mean(bs_pose, ue_pos, small_ris.with_(coupling=zero), small_spec, W).samples
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


def test_multi_antenna_anchor_shape(small_spec, small_ris, ue_pos):
    anchor = np.array([[5.0, 0.0, 3.0], [5.005, 0.0, 3.0]])
    W = random_profiles(small_ris.n_elements, small_spec.n_transmissions, 3)
    model = CascadeModel(anchor, small_ris, small_spec, W)
    assert model.mean(np.r_[ue_pos, 1.0, 0.0]).shape == (small_spec.n_subcarriers, small_spec.n_transmissions, 2)
    a1 = nearfield_response(small_ris.elements(), anchor[1], small_spec.wavelength)
    single = CascadeModel(anchor[1], small_ris, small_spec, W)
    np.testing.assert_allclose(model.spatial(ue_pos)[:, 1], single.spatial(ue_pos)[:, 0], rtol=1e-12)
    assert a1.shape == (small_ris.n_elements,)
