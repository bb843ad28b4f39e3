"""RIS cascade OFDM observation model, RIS profiles and element impairments.

The noise-free sample on subcarrier ``k`` of transmission ``t`` (and receive
antenna ``m`` for a multi-antenna anchor) is::

    mu[k, t, m] = alpha * exp(-2j*pi*k*df*tau(p)) * a_ue(p)^T Theta_t a_anchor[:, m]

``alpha`` is the complex cascade amplitude (nuisance), ``p`` the UE position,
``Theta_t`` the effective RIS operator of transmission ``t`` (diagonal unless
mutual coupling is present, see :func:`riscalib.coupling.coupled_cascade_operator`) and ``tau`` the BS-RIS-UE delay through the RIS
centroid. The direct BS-UE path is not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    ArrayLayout,
    Pose,
    element_positions,
    nearfield_response,
)


@dataclass(frozen=True)
class SignalSpec:
    carrier_hz: float = 28e9
    bandwidth_hz: float = 400e6
    n_subcarriers: int = 3000
    n_transmissions: int = 32
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -173.855
    noise_figure_db: float = 10.0
    link_gain_db: float = 0.0  # lumped antenna gains / link-budget offset

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be > 0")
        if int(self.n_subcarriers) < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if int(self.n_transmissions) < 1:
            raise ValueError("n_transmissions must be >= 1")
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be > 0")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def tx_power_w(self) -> float:
        return 10 ** (self.tx_power_dbm / 10) * 1e-3

    def with_power(self, tx_power_dbm: float) -> "SignalSpec":
        return replace(self, tx_power_dbm=float(tx_power_dbm))


def noise_variance(spec: SignalSpec) -> float:
    """Per-subcarrier noise power in W: ``10**((PSD+NF)/10) * 1e-3 * df``."""
    n0 = 10 ** ((spec.noise_psd_dbm_hz + spec.noise_figure_db) / 10) * 1e-3
    return n0 * spec.subcarrier_spacing


@dataclass(frozen=True)
class AmplitudeModel:
    beta_min: float = 0.2
    phi: float = 0.43 * np.pi
    kappa: float = 1.6

    def __post_init__(self):
        if not 0.0 <= self.beta_min <= 1.0:
            raise ValueError("beta_min must lie in [0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")


def phase_amp_coefficient(theta, model: AmplitudeModel):
    """Reflection coefficient with phase-dependent amplitude ``beta(theta) * exp(j theta)``."""
    theta = np.asarray(theta, dtype=float)
    base = np.clip((np.sin(theta - model.phi) + 1.0) / 2.0, 0.0, 1.0)
    beta = (1.0 - model.beta_min) * base**model.kappa + model.beta_min
    return beta * np.exp(1j * theta)


@dataclass(frozen=True)
class FailureMask:
    """Per-element failure flags and the coefficient each failed element is stuck at."""

    failed: np.ndarray
    stuck: np.ndarray

    def __post_init__(self):
        failed = np.asarray(self.failed, dtype=bool).ravel()
        stuck = np.asarray(self.stuck, dtype=complex).ravel()
        if failed.shape != stuck.shape:
            raise ValueError("failed and stuck must have the same length")
        if np.any(np.abs(stuck) > 1 + 1e-12):
            raise ValueError("stuck coefficients must have modulus <= 1")
        object.__setattr__(self, "failed", failed)
        object.__setattr__(self, "stuck", stuck)

    @classmethod
    def healthy(cls, n_elements: int) -> "FailureMask":
        return cls(np.zeros(n_elements, bool), np.zeros(n_elements, complex))

    @property
    def n_elements(self) -> int:
        return self.failed.size

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.failed)


def sample_failure_mask(n_elements: int, p_fail: float, rng_seed=None, stuck: str = "phase") -> FailureMask:
    """Fail each element independently with probability ``p_fail``.

    ``stuck="phase"`` leaves failed elements at unit amplitude with a uniform random
    phase; ``stuck="zero"`` makes them absorb completely.
    """
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("p_fail must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    failed = rng.random(n_elements) < p_fail
    phases = rng.uniform(0.0, 2 * np.pi, n_elements)
    if stuck == "phase":
        coeff = np.exp(1j * phases)
    elif stuck == "zero":
        coeff = np.zeros(n_elements, complex)
    else:
        raise ValueError(f"unknown stuck model {stuck!r}")
    return FailureMask(failed, np.where(failed, coeff, 0.0))


def apply_failure(profile, mask: FailureMask) -> np.ndarray:
    """Replace the failed entries of ``profile`` (``(N,)`` or ``(T, N)``) by their stuck values."""
    profile = np.asarray(profile, dtype=complex)
    if profile.shape[-1] != mask.n_elements:
        raise ValueError(
            f"profile has {profile.shape[-1]} elements but the mask has {mask.n_elements}"
        )
    return np.where(mask.failed, mask.stuck, profile)


def random_profiles(n_elements: int, n_transmissions: int, rng_seed=None) -> np.ndarray:
    """Unit-modulus profiles with i.i.d. uniform phases, shape ``(T, N)``."""
    if n_elements < 1 or n_transmissions < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, (n_transmissions, n_elements)))


@dataclass(frozen=True)
class RisPanel:
    """A planar passive RIS and its (true or believed) impairment state.

    ``coupling`` is the element scattering matrix ``S`` (``None`` means no mutual
    coupling). ``pattern_exponent`` sets the element amplitude pattern
    ``cos(angle)**q`` applied on each hop when computing absolute path gains.
    """

    layout: ArrayLayout
    pose: Pose
    failure: FailureMask | None = None
    coupling: np.ndarray | None = field(default=None, repr=False)
    amplitude: AmplitudeModel | None = None
    pattern_exponent: float = 1.0

    @property
    def n_elements(self) -> int:
        return self.layout.n_elements

    def elements(self) -> np.ndarray:
        return element_positions(self.layout, self.pose)

    @property
    def centroid(self) -> np.ndarray:
        return self.pose.position

    def effective_coefficients(self, profiles) -> np.ndarray:
        """Commanded profiles ``(T, N)`` after amplitude and failure impairments."""
        W = np.atleast_2d(np.asarray(profiles, dtype=complex))
        if W.shape[-1] != self.n_elements:
            raise ValueError("profile length does not match the RIS element count")
        if self.amplitude is not None:
            W = np.abs(W) * phase_amp_coefficient(np.angle(W), self.amplitude)
        if self.failure is not None:
            W = apply_failure(W, self.failure)
        return W

    def with_(self, **changes) -> "RisPanel":
        return replace(self, **changes)


def _apply_operators(coeffs, S, A):
    """Return ``Theta_t @ A`` for every transmission, shape ``(N, T, M)``."""
    from .coupling import coupled_cascade_operator

    T, N = coeffs.shape
    if S is None:
        return coeffs.T[:, :, None] * A[:, None, :]
    out = np.empty((N, T, A.shape[1]), dtype=complex)
    for t in range(T):
        out[:, t, :] = coupled_cascade_operator(coeffs[t], S) @ A
    return out


class CascadeModel:
    """Parametric mean of the RIS cascade as a function of ``theta = (x, y, z, re, im)``.

    ``anchor`` holds the known-side antenna positions, shape ``(M, 3)`` (a single
    BS antenna is ``M = 1``). The element-level operators are evaluated once at
    construction, so evaluating the mean for a new UE position is cheap.
    """

    def __init__(self, anchor, ris: RisPanel, spec: SignalSpec, profiles):
        if isinstance(anchor, Pose):
            anchor = anchor.position
        anchor = np.atleast_2d(np.asarray(anchor, dtype=float))
        self.anchor = anchor
        self.ris = ris
        self.spec = spec
        self.profiles = np.atleast_2d(np.asarray(profiles, dtype=complex))
        self.elements = ris.elements()
        self.centroid = self.elements.mean(axis=0)
        self.wavelength = spec.wavelength
        self.multi_rx = anchor.shape[0] > 1
        a_anchor = nearfield_response(self.elements, anchor, self.wavelength).T  # (N, M)
        self.coefficients = ris.effective_coefficients(self.profiles)
        self.V = _apply_operators(self.coefficients, ris.coupling, a_anchor)
        self.anchor_ref = anchor.mean(axis=0)
        self.d_anchor = float(np.linalg.norm(self.anchor_ref - self.centroid))
        self.freqs = np.arange(spec.n_subcarriers) * spec.subcarrier_spacing

    @property
    def shape(self):
        K, T = self.spec.n_subcarriers, self.profiles.shape[0]
        return (K, T, self.anchor.shape[0]) if self.multi_rx else (K, T)

    def delay(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        d_ue = np.linalg.norm(positions - self.centroid, axis=-1)
        return (self.d_anchor + d_ue) / SPEED_OF_LIGHT

    def spatial(self, positions) -> np.ndarray:
        """RIS inner products ``a_ue(p)^T Theta_t a_anchor``; shape ``(..., T, M)``."""
        a_ue = nearfield_response(self.elements, positions, self.wavelength)
        return np.tensordot(a_ue, self.V, axes=([-1], [0]))

    def delay_phasor(self, positions) -> np.ndarray:
        tau = self.delay(positions)
        return np.exp(-2j * np.pi * np.multiply.outer(tau, self.freqs))

    def unit_mean(self, position) -> np.ndarray:
        """Mean for unit gain at ``position``."""
        position = np.asarray(position, dtype=float)
        m = self.spatial(position)
        s = self.delay_phasor(position)
        out = s[:, None, None] * m[None, :, :]
        return out if self.multi_rx else out[:, :, 0]

    def mean(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return complex(theta[3], theta[4]) * self.unit_mean(theta[:3])

    def __call__(self, theta) -> np.ndarray:
        return self.mean(theta)


def cascade_gain(anchor_pos, ue, ris: RisPanel, spec: SignalSpec) -> float:
    """Magnitude of the cascade amplitude per subcarrier.

    Free-space two-hop product ``lambda^2 / ((4 pi)^2 d1 d2)`` times the element
    pattern on both hops and the lumped ``link_gain_db``, with the transmit power
    split evenly over subcarriers.
    """
    c = ris.centroid
    v1 = np.asarray(anchor_pos, dtype=float) - c
    v2 = np.asarray(ue, dtype=float) - c
    d1, d2 = np.linalg.norm(v1), np.linalg.norm(v2)
    lam = spec.wavelength
    g = lam**2 / ((4 * np.pi) ** 2 * d1 * d2)
    n = ris.pose.normal
    q = ris.pattern_exponent
    if q:
        g *= max(v1 @ n / d1, 0.0) ** q * max(v2 @ n / d2, 0.0) ** q
    g *= 10 ** (spec.link_gain_db / 20)
    return float(np.sqrt(spec.tx_power_w / spec.n_subcarriers) * g)


def sample_snr_db(bs, ue, ris: RisPanel, spec: SignalSpec) -> float:
    """Per-sample SNR ``N |alpha|^2 / sigma^2`` of a co-phased cascade, in dB."""
    anchor = np.atleast_2d(bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)).mean(axis=0)
    g = cascade_gain(anchor, ue, ris, spec)
    return float(10 * np.log10(ris.n_elements * g**2 / noise_variance(spec)))


def tx_power_for_snr(bs, ue, ris: RisPanel, spec: SignalSpec, snr_db: float) -> float:
    """Transmit power (dBm) at which :func:`sample_snr_db` equals ``snr_db``."""
    return float(spec.tx_power_dbm + snr_db - sample_snr_db(bs, ue, ris, spec))


@dataclass
class Observation:
    samples: np.ndarray  # (K, T) or (K, T, M)
    noise_var: float

    @property
    def shape(self):
        return self.samples.shape


def true_theta(bs: Pose | np.ndarray, ue, ris: RisPanel, spec: SignalSpec) -> np.ndarray:
    anchor = bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)
    anchor_ref = np.atleast_2d(anchor).mean(axis=0)
    g = cascade_gain(anchor_ref, ue, ris, spec)
    return np.r_[np.asarray(ue, dtype=float), g, 0.0]


def cascade_mean(bs, ue, ris: RisPanel, spec: SignalSpec, profiles) -> Observation:
    """Noise-free received pilots for a UE at ``ue``."""
    anchor = bs.position if isinstance(bs, Pose) else bs
    model = CascadeModel(anchor, ris, spec, profiles)
    theta = true_theta(anchor, ue, ris, spec)
    return Observation(model.mean(theta), noise_variance(spec))


def add_noise(mean: Observation, rng_seed=None) -> Observation:
    """Add circularly-symmetric complex Gaussian noise with variance ``mean.noise_var``."""
    rng = np.random.default_rng(rng_seed)
    shape = mean.samples.shape
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return Observation(mean.samples + np.sqrt(mean.noise_var / 2) * w, mean.noise_var)


def positional_beam(target, bs, ris: RisPanel, wavelength: float) -> np.ndarray:
    """Unit-modulus profile that co-phases the BS -> element -> ``target`` paths."""
    anchor = bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)
    E = ris.elements()
    a_in = nearfield_response(E, np.atleast_2d(anchor).mean(axis=0), wavelength)
    a_out = nearfield_response(E, target, wavelength)
    return np.conj(a_in * a_out)


class FixedHeightModel:
    """A cascade model whose UE height is known; ``theta = (x, y, re, im)``.

    Used with linear RIS arrays, which cannot resolve the rotation of the UE
    position about the array axis.
    """

    def __init__(self, model: CascadeModel, height: float):
        self.model = model
        self.height = float(height)

    def full(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.r_[theta[:2], self.height, theta[2:]]

    def __call__(self, theta) -> np.ndarray:
        return self.model.mean(self.full(theta))
