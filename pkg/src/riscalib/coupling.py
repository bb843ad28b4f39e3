"""Mutual coupling between RIS elements: impedance synthesis, S-parameters, coupled response."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .geometry import ArrayLayout, Pose, element_positions

ETA0 = 376.730313668  # free-space wave impedance, ohm


@lru_cache(maxsize=4096)
def _induced_emf(distance: float, length: float, wavelength: float) -> complex:
    """Induced-EMF impedance between two side-by-side parallel dipoles.

    Sinusoidal current distribution on both wires; the result is referred to the
    feed-point current. Passing the wire radius as ``distance`` gives the self
    impedance of a thin dipole.
    """
    k = 2 * np.pi / wavelength
    h = length / 2.0
    d = distance
    c = np.cos(k * h)

    def field(z):
        R1 = np.sqrt(d**2 + (z - h) ** 2)
        R2 = np.sqrt(d**2 + (z + h) ** 2)
        r = np.sqrt(d**2 + z**2)
        return np.exp(-1j * k * R1) / R1 + np.exp(-1j * k * R2) / R2 - 2 * c * np.exp(-1j * k * r) / r

    def integrand(z, part):
        v = field(z) * np.sin(k * (h - z))
        return v.real if part == 0 else v.imag

    # symmetric in z; the near-end peak sits within a few ``d`` of z = h
    brk = [max(h - 10 * d, 0.5 * h)] if d < 0.05 * h else None
    re = integrate.quad(integrand, 0.0, h, args=(0,), limit=400, points=brk, epsabs=0, epsrel=1e-11)[0]
    im = integrate.quad(integrand, 0.0, h, args=(1,), limit=400, points=brk, epsabs=0, epsrel=1e-11)[0]
    z_max = 1j * ETA0 / (4 * np.pi) * 2 * (re + 1j * im)
    return complex(z_max / np.sin(k * h) ** 2)


def self_impedance(length: float, wavelength: float, radius: float) -> complex:
    return _induced_emf(float(radius), float(length), float(wavelength))


def mutual_impedance(distance: float, length: float, wavelength: float) -> complex:
    return _induced_emf(float(distance), float(length), float(wavelength))


@dataclass(frozen=True)
class ImpedanceMatrix:
    Z: np.ndarray
    z0: float = 50.0

    def __post_init__(self):
        if not self.z0 > 0:
            raise ValueError("reference impedance must be real and > 0")


@dataclass(frozen=True)
class CouplingCalibration:
    sigma: float
    S_hat: np.ndarray


def mutual_impedance_matrix(
    layout: ArrayLayout | np.ndarray,
    wavelength: float,
    dipole_length: float | None = None,
    load_impedance: float = 70.0,
    radius: float | None = None,
) -> ImpedanceMatrix:
    """Z-parameters of an array of parallel thin dipoles.

    ``layout`` is an :class:`ArrayLayout` or an explicit ``(N, 3)`` array of element
    positions. Defaults: near-resonant ``0.48 wavelength`` dipoles with wire radius
    ``wavelength/2000`` and a 70 ohm reference, so that an isolated port is close
    to matched and the uncoupled limit reduces to the ideal diagonal RIS.
    """
    if isinstance(layout, ArrayLayout):
        pos = element_positions(layout, Pose(np.zeros(3)))
    else:
        pos = np.atleast_2d(np.asarray(layout, dtype=float))
    L = 0.48 * wavelength if dipole_length is None else float(dipole_length)
    a = wavelength / 2000 if radius is None else float(radius)
    N = pos.shape[0]
    D = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    off = D[~np.eye(N, dtype=bool)]
    if off.size and off.min() <= a:
        raise ValueError("element spacing must exceed the dipole radius (zero spacing?)")
    Z = np.empty((N, N), dtype=complex)
    # distances are rounded so that equal spacings share one quadrature
    keys = np.round(D / wavelength, 12)
    cache: dict[float, complex] = {}
    for i in range(N):
        Z[i, i] = self_impedance(L, wavelength, a)
        for j in range(i + 1, N):
            key = keys[i, j]
            if key not in cache:
                cache[key] = mutual_impedance(D[i, j], L, wavelength)
            Z[i, j] = Z[j, i] = cache[key]
    return ImpedanceMatrix(Z, float(load_impedance))


def z_to_s(Z: ImpedanceMatrix | np.ndarray, z0: float | None = None) -> np.ndarray:
    """``S = (Z + z0 I)^-1 (Z - z0 I)``."""
    if isinstance(Z, ImpedanceMatrix):
        z0 = Z.z0 if z0 is None else z0
        Z = Z.Z
    z0 = 50.0 if z0 is None else z0
    Z = np.asarray(Z, dtype=complex)
    eye = np.eye(Z.shape[0])
    A = Z + z0 * eye
    if np.linalg.cond(A) > 1e13:
        raise np.linalg.LinAlgError("Z + z0*I is singular")
    return np.linalg.solve(A, Z - z0 * eye)


def s_to_z(S, z0: float = 50.0) -> np.ndarray:
    """Inverse of :func:`z_to_s`: ``Z = z0 (I + S)(I - S)^-1``."""
    S = np.asarray(S, dtype=complex)
    eye = np.eye(S.shape[0])
    A = eye - S
    if np.linalg.cond(A) > 1e13:
        raise np.linalg.LinAlgError("I - S is singular")
    # (I+S) and (I-S)^-1 commute
    return z0 * np.linalg.solve(A, eye + S)


def coupled_ris_operator(profile, S) -> np.ndarray:
    """Effective RIS matrix ``Gamma (I - S Gamma)^-1`` for one profile ``Gamma = diag(profile)``."""
    g = np.asarray(profile, dtype=complex).ravel()
    N = g.size
    if S is None:
        return np.diag(g)
    S = np.asarray(S, dtype=complex)
    if S.shape != (N, N):
        raise ValueError("profile and scattering matrix sizes differ")
    M = np.eye(N) - S * g[None, :]
    if np.linalg.cond(M) > 1e13:
        raise np.linalg.LinAlgError("I - S Gamma is singular")
    # Theta = Gamma M^-1  <=>  Theta^T = M^-T Gamma
    return np.linalg.solve(M.T, np.diag(g)).T


def coupled_cascade_operator(profile, S) -> np.ndarray:
    """Port-referenced cascade operator ``(I - S) Theta_eff (I - S)``.

    Free-space steering vectors describe incident and radiated waves; the waves
    at the element ports are obtained through ``I - S``. Without this factor a
    lossless tightly coupled array shows unbounded resonant gains.
    """
    theta = coupled_ris_operator(profile, S)
    if S is None:
        return theta
    P = np.eye(theta.shape[0]) - np.asarray(S, dtype=complex)
    return P @ theta @ P


def noisy_calibration(S, sigma: float, rng_seed=None) -> CouplingCalibration:
    """Perturb each S-parameter by a relative complex Gaussian error of standard deviation ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    S = np.asarray(S, dtype=complex)
    if sigma == 0:
        return CouplingCalibration(0.0, S.copy())
    rng = np.random.default_rng(rng_seed)
    w = (rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)) / np.sqrt(2)
    return CouplingCalibration(float(sigma), S * (1 + sigma * w))
