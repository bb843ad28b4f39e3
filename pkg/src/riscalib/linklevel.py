"""Communication-side metrics: pilot/data energy split, pilot beam selection, rates.

Powers are in W. A link's channel is reported per unit transmit amplitude
(``sqrt(W)``) and the SNR refers to the full band, so that it equals the
per-subcarrier SNR of the OFDM observation model in :mod:`riscalib.channel`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import RisPanel, SignalSpec, cascade_gain, noise_variance, positional_beam
from .coupling import coupled_cascade_operator
from .geometry import Pose, nearfield_response


class InfeasibleSplitError(ValueError):
    """The pilot energy exceeds the total energy budget."""


@dataclass(frozen=True)
class TradeoffPlan:
    T: int
    T_p: int
    P_p: float
    P_d: float
    E_tot: float

    def __post_init__(self):
        if not 0 <= self.T_p <= self.T:
            raise ValueError("need 0 <= T_p <= T")
        if self.P_p < 0 or self.P_d < 0:
            raise ValueError("powers must be >= 0")
        if self.T_p * self.P_p + self.T_d * self.P_d > self.E_tot + 1e-9 * max(1.0, abs(self.E_tot)):
            raise ValueError("plan exceeds the energy budget")

    @property
    def T_d(self) -> int:
        return self.T - self.T_p

    @property
    def energy(self) -> float:
        return self.T_p * self.P_p + self.T_d * self.P_d


@dataclass(frozen=True)
class UncertaintyRegion:
    """Axis-aligned box of prior UE positions."""

    center: np.ndarray
    half_widths: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        hw = np.broadcast_to(np.asarray(self.half_widths, dtype=float), (3,)).copy()
        if np.any(hw < 0) or not np.all(np.isfinite(hw)):
            raise ValueError("half-widths must be finite and >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", hw)

    def sample(self, n: int, rng_seed=None) -> np.ndarray:
        rng = np.random.default_rng(rng_seed)
        return self.center + rng.uniform(-1.0, 1.0, (n, 3)) * self.half_widths


def energy_split(T: int, T_p: int, P_p: float, E_tot: float) -> TradeoffPlan:
    """Data power that spends the remaining budget: ``(E_tot - T_p P_p) / (T - T_p)``."""
    if not 0 < T_p < T:
        raise ValueError("need 0 < T_p < T")
    if P_p < 0:
        raise ValueError("pilot power must be >= 0")
    rest = E_tot - T_p * P_p
    if rest < -1e-12 * max(1.0, abs(E_tot)):
        raise InfeasibleSplitError(
            f"pilot energy {T_p * P_p:g} exceeds the budget {E_tot:g}; infeasible split"
        )
    return TradeoffPlan(int(T), int(T_p), float(P_p), max(rest, 0.0) / (T - T_p), float(E_tot))


def _anchor_point(bs) -> np.ndarray:
    anchor = bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)
    return np.atleast_2d(anchor).mean(axis=0)


def link_channel(bs, ue, ris: RisPanel, spec: SignalSpec, profile) -> complex:
    """Narrowband cascade channel BS -> RIS -> UE per ``sqrt(W)`` of transmit power.

    ``ris`` carries the true impairments (failures, amplitude model, coupling).
    """
    anchor = _anchor_point(bs)
    E = ris.elements()
    lam = spec.wavelength
    a_in = nearfield_response(E, anchor, lam)
    a_ue = nearfield_response(E, ue, lam)
    g = ris.effective_coefficients(profile)[0]
    inner = a_ue @ coupled_cascade_operator(g, ris.coupling) @ a_in
    # cascade_gain carries sqrt(P/K); strip it to get the unit-power amplitude
    scale = cascade_gain(anchor, ue, ris, spec) / np.sqrt(spec.tx_power_w / spec.n_subcarriers)
    return complex(scale * inner)


def band_noise(spec: SignalSpec) -> float:
    """Noise power over the whole band (W)."""
    return noise_variance(spec) * spec.n_subcarriers


@dataclass(frozen=True)
class BeamSelection:
    profile: np.ndarray
    index: int
    powers: np.ndarray  # |h|^2 per candidate beam, W/W
    targets: np.ndarray
    profiles: np.ndarray  # (n_beams, N), the pilot profiles


def pilot_beam_select(
    region: UncertaintyRegion,
    n_beams: int,
    bs,
    ue,
    ris: RisPanel,
    spec: SignalSpec,
    rng_seed=None,
) -> BeamSelection:
    """Positional beams towards uniform draws from ``region``; keep the strongest at the UE.

    Beam powers are evaluated on the true panel ``ris``; ties go to the lowest index.
    """
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    targets = region.sample(n_beams, rng_seed)
    believed = ris.with_(failure=None, coupling=None, amplitude=None)
    profiles = np.stack([positional_beam(p, bs, believed, spec.wavelength) for p in targets])
    powers = np.array([abs(link_channel(bs, ue, ris, spec, w)) ** 2 for w in profiles])
    idx = int(np.argmax(powers))  # first maximum
    return BeamSelection(profiles[idx], idx, powers, targets, profiles)


def comm_rate(plan: TradeoffPlan, channel_power: float, spec: SignalSpec) -> float:
    """Data-phase rate ``(T_d / T) log2(1 + P_d |h|^2 / sigma^2)`` in bits/s/Hz."""
    if channel_power < 0:
        raise ValueError("channel power must be >= 0")
    snr = plan.P_d * channel_power / band_noise(spec)
    return float(plan.T_d / plan.T * np.log2(1.0 + snr))


# --------------------------------------------------------------------------- SIMO SE


@dataclass(frozen=True)
class SeResult:
    se: float  # evaluated on the true coupled channel
    se_design: float  # objective on the channel built from the assumed coupling
    profile: np.ndarray
    history: np.ndarray  # design objective after each sweep
    converged: bool


def _simo_channels(tx, rx_positions, ris: RisPanel, wavelength: float):
    E = ris.elements()
    a = nearfield_response(E, tx, wavelength)  # (N,)
    G = nearfield_response(E, np.atleast_2d(rx_positions), wavelength)  # (M, N)
    return a, G


def _coupled_gain(g, S, a, G) -> np.ndarray:
    return G @ (coupled_cascade_operator(g, S) @ a)


def spectral_efficiency(
    tx,
    rx_positions,
    ris: RisPanel,
    spec: SignalSpec,
    S_hat=None,
    max_sweeps: int = 50,
    n_phases: int = 64,
    tol: float = 1e-9,
) -> SeResult:
    """SE of a SIMO link through a coupled RIS with matched-filter combining.

    The RIS profile maximizes ``||G (I-S) Theta(S_hat) (I-S) a||^2`` computed with the
    assumed coupling ``S_hat`` by element-wise phase updates, starting from the
    phases of the dominant eigenvector of the uncoupled problem. Each element
    moves only if the design objective increases, so the objective sequence is
    non-decreasing. The returned ``se`` uses the true coupling ``ris.coupling``.
    """
    lam = spec.wavelength
    a, G = _simo_channels(tx, rx_positions, ris, lam)
    N = a.size
    S_true = ris.coupling
    S_hat = None if S_hat is None or not np.any(S_hat) else np.asarray(S_hat, dtype=complex)
    scale2 = (cascade_gain(np.atleast_2d(rx_positions).mean(axis=0), tx, ris, spec) ** 2
              / noise_variance(spec))

    B = G * a[None, :]  # uncoupled per-element contributions, (M, N)
    _, vecs = np.linalg.eigh(B.conj().T @ B)
    g = np.exp(1j * np.angle(vecs[:, -1]))
    cand = np.exp(2j * np.pi * np.arange(1, n_phases) / n_phases)
    P = None if S_hat is None else np.eye(N) - S_hat

    def objective(x):
        return float(np.linalg.norm(_coupled_gain(x, S_hat, a, G)) ** 2)

    f = objective(g)
    history = [f]
    converged = False
    for _ in range(max_sweeps):
        f_start = f
        if S_hat is None:
            h = B @ g
            for n in range(N):
                # exact maximizer of ||r + g_n b_n||^2 on the unit circle
                r = h - B[:, n] * g[n]
                c = np.vdot(B[:, n], r)
                v = np.exp(1j * np.angle(c)) if abs(c) > 0 else g[n]
                fv = float(np.linalg.norm(r + B[:, n] * v) ** 2)
                if fv > f:
                    g[n], h, f = v, r + B[:, n] * v, fv
        else:
            # Theta = (diag(1/g) - S_hat)^-1; one element change is a rank-one update
            X = np.linalg.inv(np.diag(1.0 / g) - S_hat)
            GP, Pa = G @ P, P @ a
            h = GP @ (X @ Pa)
            for n in range(N):
                u = GP @ X[:, n]
                w = X[n] @ Pa
                eps = 1.0 / (g[n] * cand) - 1.0 / g[n]
                den = 1.0 + eps * X[n, n]
                ok = np.abs(den) > 1e-12
                hc = h[None, :] - ((eps * w / np.where(ok, den, 1.0))[:, None] * u[None, :])
                fc = np.where(ok, np.linalg.norm(hc, axis=1) ** 2, -np.inf)
                k = int(np.argmax(fc))
                if fc[k] > f:
                    e, d = eps[k], den[k]
                    X = X - e * np.outer(X[:, n], X[n]) / d
                    g[n] = g[n] * cand[k]
                    h, f = hc[k], float(fc[k])
            f = objective(g)  # refresh against accumulated rounding
        history.append(f)
        if f - f_start <= tol * max(f, 1e-300):
            converged = True
            break
    se_design = float(np.log2(1.0 + scale2 * f))
    h = _coupled_gain(g, S_true, a, G)
    se = float(np.log2(1.0 + scale2 * np.linalg.norm(h) ** 2))
    return SeResult(se, se_design, g.copy(), np.asarray(history), converged)


def cophasing_se(tx, rx_position, ris: RisPanel, spec: SignalSpec) -> float:
    """Closed-form optimum for one receive antenna and no coupling."""
    a, G = _simo_channels(tx, rx_position, ris, spec.wavelength)
    amp = np.abs(G[0] * a).sum()
    scale2 = cascade_gain(np.atleast_2d(rx_position).mean(axis=0), tx, ris, spec) ** 2 / noise_variance(spec)
    return float(np.log2(1.0 + scale2 * amp**2))
