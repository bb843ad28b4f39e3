"""Fisher information, position error bounds and misspecified-model bounds.

All bounds are expressed for the real parameter vector
``theta = (x, y, z, gain_re, gain_im)``. The position and gain coordinates
differ by many orders of magnitude in scale, so every inversion is done on the
Jacobi-scaled matrix ``D^-1 F D^-1`` with ``D = sqrt(diag(F))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import (
    CascadeModel,
    RisPanel,
    SignalSpec,
    noise_variance,
    sample_failure_mask,
    true_theta,
)

N_POS = 3


class UnidentifiableError(np.linalg.LinAlgError):
    """Raised when an information matrix cannot be inverted."""


class ConvergenceError(RuntimeError):
    """Pseudo-true search did not reach a stationary point; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: "PseudoTrue"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class PseudoTrue:
    theta: np.ndarray
    residual: float
    gradient_norm: float
    n_iterations: int
    stalled: bool = False  # no damped step lowered the cost


    @property
    def position(self) -> np.ndarray:
        return self.theta[:N_POS]


@dataclass(frozen=True)
class BoundReport:
    """Matched and misspecified bounds for one scenario point (lengths in m)."""

    lb: float
    asymptotic_peb: float
    pseudo_true: np.ndarray
    mcrb_position: np.ndarray
    peb: float | None = None

    def rescaled(self, power_ratio: float) -> "BoundReport":
        """The same report after scaling the transmit power by ``power_ratio``.

        The pseudo-true position does not move with power, its gain scales with
        the amplitude, and the sandwich term of the position block scales as
        ``1 / power_ratio``; this is exact for the cascade model.
        """
        if not power_ratio > 0:
            raise ValueError("power ratio must be > 0")
        n = self.mcrb_position.shape[0]
        M = self.mcrb_position / power_ratio
        theta = self.pseudo_true.copy()
        theta[n:] *= np.sqrt(power_ratio)
        lb = float(np.sqrt(max(np.trace(M), 0.0) + self.asymptotic_peb**2))
        peb_value = None if self.peb is None else self.peb / np.sqrt(power_ratio)
        return BoundReport(lb, self.asymptotic_peb, theta, M, peb_value)


def _flat(model, theta) -> np.ndarray:
    out = np.asarray(model(theta)).ravel()
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("model returned non-finite values")
    return out.astype(complex, copy=False)


def _steps(theta, rel: float, floor: float) -> np.ndarray:
    return np.maximum(floor, rel * np.abs(theta))


def jacobian(model: Callable, theta, rel_step: float = 1e-6, min_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the flattened model output.

    Returns a complex ``(n_samples, n_params)`` matrix; column ``i`` uses the step
    ``max(min_step, rel_step * |theta_i|)``.
    """
    theta = np.asarray(theta, dtype=float)
    h = _steps(theta, rel_step, min_step)
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h[i]
        cols.append((_flat(model, theta + e) - _flat(model, theta - e)) / (2 * h[i]))
    return np.stack(cols, axis=1)


def fim(J, noise_var: float) -> np.ndarray:
    """Gaussian Fisher information ``(2/noise_var) Re(J^H J)``."""
    if not noise_var > 0:
        raise ValueError("noise variance must be > 0")
    J = np.asarray(J)
    return (2.0 / noise_var) * np.real(J.conj().T @ J)


def _scaled_inverse(F, what: str = "information matrix", cond_max: float = 1e13) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    d = np.sqrt(np.abs(np.diag(F)))
    if np.any(d == 0) or not np.all(np.isfinite(F)):
        raise UnidentifiableError(f"{what} has an empty direction; parameters are not identifiable")
    Fs = F / np.outer(d, d)
    if np.linalg.cond(Fs) > cond_max:
        raise UnidentifiableError(f"{what} is singular; parameters are not identifiable")
    return np.linalg.inv(Fs) / np.outer(d, d)


def crb(F) -> np.ndarray:
    """Inverse FIM (the Cramér-Rao bound matrix)."""
    return _scaled_inverse(F, "FIM")


def peb(F, n_pos: int = N_POS) -> float:
    """Position error bound: ``sqrt(trace(inv(F)[:n_pos, :n_pos]))``."""
    C = crb(F)
    return float(np.sqrt(np.trace(C[:n_pos, :n_pos])))


def matched_peb(model: Callable, theta, noise_var: float, n_pos: int = N_POS) -> float:
    return peb(fim(jacobian(model, theta), noise_var), n_pos)


def gauss_newton(y, model, theta0, max_iter: int = 100, tol: float = 1e-8) -> PseudoTrue:
    """Damped Gauss-Newton on ``||y - model(theta)||^2`` with backtracking.

    The gradient test uses column-normalized Jacobians (see :func:`pseudo_true`).
    """
    theta = np.array(theta0, dtype=float)
    y_norm = np.linalg.norm(y)
    r = y - _flat(model, theta)
    cost = np.linalg.norm(r)
    grad = np.inf
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        J = jacobian(model, theta)
        d = np.linalg.norm(J, axis=0)
        d[d == 0] = 1.0
        Js = J / d
        g = np.real(Js.conj().T @ r)
        grad = float(np.linalg.norm(g))
        if grad <= tol * y_norm:
            break
        H = np.real(Js.conj().T @ Js)
        found = False
        # plain Gauss-Newton first, then increasingly damped steps
        for mu in (0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2):
            step = np.linalg.lstsq(H + mu * np.eye(H.shape[0]), g, rcond=None)[0] / d
            lam = 1.0
            while lam > 1e-6:
                cand = theta + lam * step
                r_c = y - _flat(model, cand)
                c = np.linalg.norm(r_c)
                if c < cost:
                    found = True
                    break
                lam *= 0.5
            if found:
                break
        if not found:
            stalled = True  # no descent possible: already at numerical optimum
            break
        theta, r, cost = cand, r_c, c
    return PseudoTrue(theta, float(cost), grad, it, stalled)


def default_starts(theta, offset: float = 0.1, n_pos: int = N_POS) -> list[np.ndarray]:
    """The given parameter plus starts displaced by ``+-offset`` m along each position axis."""
    theta = np.asarray(theta, dtype=float)
    starts = [theta.copy()]
    for axis in range(n_pos):
        for sgn in (1.0, -1.0):
            s = theta.copy()
            s[axis] += sgn * offset
            starts.append(s)
    return starts


def pseudo_true(
    true_mean,
    mismatched_model: Callable,
    init,
    starts: Sequence | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
    return_all: bool = False,
):
    """Minimize ``||mu_true - mu_mis(theta)||^2`` by multi-start Gauss-Newton.

    ``starts`` defaults to :func:`default_starts` around ``init``. Stationarity is
    declared when the gradient, taken with column-normalized Jacobians so that it
    has the units of the samples, is below ``tol * ||mu_true||`` or below
    ``1e-6`` times the residual norm (the accuracy of a finite-difference
    Jacobian), or when no damped step lowers the cost. The solution with the
    smallest residual is returned (all solutions with ``return_all``).
    """
    y = np.asarray(getattr(true_mean, "samples", true_mean)).ravel().astype(complex)
    starts = default_starts(init) if starts is None else [np.asarray(s, dtype=float) for s in starts]
    sols = [gauss_newton(y, mismatched_model, s, max_iter, tol) for s in starts]
    r_min = min(s.residual for s in sols)
    # residuals equal to rounding level: prefer the most stationary solution
    tied = [s for s in sols if s.residual <= r_min * (1 + 1e-9) + 1e-300]
    best = min(tied, key=lambda s: s.gradient_norm)
    # a vanishing residual needs no gradient test
    y_norm = np.linalg.norm(y)
    ok = (
        best.gradient_norm <= max(tol * y_norm, 1e-6 * best.residual)
        or best.residual <= 1e-10 * max(y_norm, 1e-300)
        or best.stalled
    )
    if not ok:
        raise ConvergenceError(
            f"pseudo-true search stalled (gradient {best.gradient_norm:.3g}, residual {best.residual:.3g})",
            best,
        )
    return (best, sols) if return_all else best


def _second_derivatives(model, theta, rel_step: float = 1e-5, min_step: float = 1e-5) -> np.ndarray:
    """``d2mu / dtheta_i dtheta_j`` by central differences of the Jacobian; ``(n, p, p)``."""
    theta = np.asarray(theta, dtype=float)
    h = _steps(theta, rel_step, min_step)
    p = theta.size
    out = None
    for i in range(p):
        e = np.zeros(p)
        e[i] = h[i]
        dJ = (jacobian(model, theta + e) - jacobian(model, theta - e)) / (2 * h[i])
        if out is None:
            out = np.empty((dJ.shape[0], p, p), dtype=complex)
        out[:, i, :] = dJ
    return 0.5 * (out + out.transpose(0, 2, 1))


def mcrb_matrices(theta_pt, mismatched_model, true_mean, noise_var: float):
    """Return ``(A, B)`` of the misspecified bound at the pseudo-true point."""
    y = np.asarray(getattr(true_mean, "samples", true_mean)).ravel().astype(complex)
    J = jacobian(mismatched_model, theta_pt)
    r = y - _flat(mismatched_model, theta_pt)
    B = fim(J, noise_var)
    if np.linalg.norm(r) == 0:
        return B.copy(), B
    H = _second_derivatives(mismatched_model, theta_pt)
    A = B - (2.0 / noise_var) * np.real(np.einsum("n,nij->ij", r.conj(), H))
    return 0.5 * (A + A.T), B


def mcrb_lb(
    theta_pt,
    mismatched_model: Callable,
    true_mean,
    noise_var: float,
    true_position,
    peb_value: float | None = None,
) -> BoundReport:
    """Sandwich bound ``A^-1 B A^-1`` plus the squared pseudo-true bias, as an RMSE-like scalar.

    The position block is the leading ``len(true_position)`` parameters.
    """
    theta_pt = np.asarray(theta_pt, dtype=float)
    true_position = np.atleast_1d(np.asarray(true_position, dtype=float))
    n = true_position.size
    A, B = mcrb_matrices(theta_pt, mismatched_model, true_mean, noise_var)
    Ai = _scaled_inverse(A, "misspecified information matrix A")
    M = Ai @ B @ Ai
    bias = float(np.linalg.norm(theta_pt[:n] - true_position))
    Mp = 0.5 * (M[:n, :n] + M[:n, :n].T)
    lb = float(np.sqrt(max(np.trace(Mp), 0.0) + bias**2))
    return BoundReport(lb=lb, asymptotic_peb=bias, pseudo_true=theta_pt, mcrb_position=Mp, peb=peb_value)


def mismatch_report(
    true_model: Callable,
    theta_true,
    mismatched_model: Callable,
    noise_var: float,
    starts: Sequence | None = None,
    n_pos: int = N_POS,
) -> BoundReport:
    """Matched PEB, pseudo-true point and LB for data from ``true_model`` fitted with ``mismatched_model``."""
    theta_true = np.asarray(theta_true, dtype=float)
    y = _flat(true_model, theta_true)
    if starts is None:
        starts = default_starts(theta_true, n_pos=n_pos)
    pt = pseudo_true(y, mismatched_model, theta_true, starts=starts)
    report = mcrb_lb(pt.theta, mismatched_model, y, noise_var, theta_true[:n_pos])
    return BoundReport(
        lb=report.lb,
        asymptotic_peb=report.asymptotic_peb,
        pseudo_true=report.pseudo_true,
        mcrb_position=report.mcrb_position,
        peb=matched_peb(true_model, theta_true, noise_var, n_pos),
    )


def failure_report(bs, ue, ris: RisPanel, spec: SignalSpec, profiles, mask) -> BoundReport:
    """Bound of the failure-agnostic estimator for one failure mask.

    Data follow ``ris`` with ``mask`` applied; the estimator assumes every element
    healthy. A mask without failures returns the matched bound.
    """
    healthy = ris.with_(failure=None)
    assumed = CascadeModel(bs, healthy, spec, profiles)
    theta = true_theta(bs, ue, healthy, spec)
    sigma2 = noise_variance(spec)
    if mask.n_failed == 0:
        F = fim(jacobian(assumed, theta), sigma2)
        C = crb(F)[:N_POS, :N_POS]
        C = 0.5 * (C + C.T)
        value = float(np.sqrt(np.trace(C)))
        return BoundReport(value, 0.0, theta, C, value)
    true_model = CascadeModel(bs, healthy.with_(failure=mask), spec, profiles)
    y = _flat(true_model, theta)
    pt = pseudo_true(y, assumed, theta)
    return mcrb_lb(pt.theta, assumed, y, sigma2, theta[:N_POS])


def failure_lb(
    bs,
    ue,
    ris: RisPanel,
    spec: SignalSpec,
    profiles,
    p_fail: float,
    n_realizations: int = 50,
    rng_seed=None,
    stuck: str = "phase",
    tx_powers_dbm: Sequence[float] | None = None,
):
    """RMS over failure realizations of the LB of a failure-unaware estimator.

    Data follow ``ris`` with an independently drawn failure mask per realization;
    the estimator assumes every element healthy. With ``tx_powers_dbm`` the bound
    is returned as an array over those powers (the masks are shared), otherwise
    as a float at ``spec.tx_power_dbm``.
    """
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("p_fail must lie in [0, 1]")
    powers = [spec.tx_power_dbm] if tx_powers_dbm is None else list(tx_powers_dbm)
    ratios = 10 ** ((np.asarray(powers, dtype=float) - spec.tx_power_dbm) / 10)
    seeds = np.random.SeedSequence(rng_seed).spawn(n_realizations)
    sq = np.zeros(len(powers))
    for ss in seeds:
        mask = sample_failure_mask(ris.n_elements, p_fail, ss, stuck=stuck)
        report = failure_report(bs, ue, ris, spec, profiles, mask)
        sq += np.array([report.rescaled(r).lb ** 2 for r in ratios])
    out = np.sqrt(sq / n_realizations)
    return float(out[0]) if tx_powers_dbm is None else out
