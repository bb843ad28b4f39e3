"""UE localization, joint localization and failure diagnosis, and RIS pose calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import chi2
from scipy.spatial.transform import Rotation

from .bounds import gauss_newton
from .channel import CascadeModel, FailureMask, Observation
from .geometry import SPEED_OF_LIGHT, Pose


@dataclass(frozen=True)
class SearchGrid:
    """Regular 3D grid of candidate positions."""

    center: np.ndarray
    half_widths: np.ndarray = field(default_factory=lambda: np.ones(3))
    n_points: tuple = (21, 21, 21)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        hw = np.broadcast_to(np.asarray(self.half_widths, dtype=float), (3,)).copy()
        n = tuple(int(v) for v in np.broadcast_to(np.asarray(self.n_points), (3,)))
        if np.any(hw <= 0):
            raise ValueError("grid half-widths must be > 0")
        if min(n) < 2:
            raise ValueError("grid needs at least 2 points per axis")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "n_points", n)

    def points(self) -> np.ndarray:
        axes = [np.linspace(c - h, c + h, n) for c, h, n in zip(self.center, self.half_widths, self.n_points)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


@dataclass(frozen=True)
class LocalizationResult:
    position: np.ndarray
    gain: complex
    residual: float
    converged: bool


def _samples(obs) -> np.ndarray:
    y = np.asarray(getattr(obs, "samples", obs), dtype=complex)
    return y if y.ndim == 3 else y[:, :, None]


def profiled_cost(y, model: CascadeModel, positions, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares cost with the gain eliminated, for each candidate position.

    Returns ``(cost, gain)`` arrays; ``cost = ||y||^2 - |<u, y>|^2 / ||u||^2`` with
    ``u`` the unit-gain mean at the candidate.
    """
    y = _samples(y)
    K = y.shape[0]
    Y = y.reshape(K, -1)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    cost = np.empty(len(positions))
    gain = np.empty(len(positions), dtype=complex)
    y2 = np.vdot(Y, Y).real
    for i in range(0, len(positions), chunk):
        P = positions[i : i + chunk]
        s = model.delay_phasor(P)  # (G, K)
        z = s.conj() @ Y  # (G, T*M)
        m = model.spatial(P).reshape(len(P), -1)  # (G, T*M)
        corr = np.einsum("gi,gi->g", m.conj(), z)
        norm = K * np.einsum("gi,gi->g", m.conj(), m).real
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(norm > 0, corr / norm, 0.0)
            cost[i : i + chunk] = y2 - np.where(norm > 0, np.abs(corr) ** 2 / norm, 0.0)
        gain[i : i + chunk] = g
    return cost, gain


def ml_localize(obs, model: CascadeModel, grid: SearchGrid, refine: bool = True) -> LocalizationResult:
    """Grid search with the complex gain profiled out, then Gauss-Newton refinement."""
    y = _samples(obs)
    pts = grid.points()
    cost, gain = profiled_cost(y, model, pts)
    j = int(np.argmin(cost))
    p0, g0 = pts[j], gain[j]
    theta0 = np.r_[p0, g0.real, g0.imag]
    flat = y.ravel() if model.multi_rx else y[:, :, 0].ravel()
    if not refine:
        return LocalizationResult(p0, complex(g0), float(np.sqrt(max(cost[j], 0.0))), True)
    sol = gauss_newton(flat, model, theta0, max_iter=50, tol=1e-10)
    r0 = np.sqrt(max(cost[j], 0.0))
    if not np.all(np.isfinite(sol.theta)) or sol.residual > r0 * (1 + 1e-12):
        warnings.warn("refinement diverged; returning the best grid point", RuntimeWarning, stacklevel=2)
        return LocalizationResult(p0, complex(g0), float(r0), False)
    th = sol.theta
    return LocalizationResult(th[:3].copy(), complex(th[3], th[4]), sol.residual, True)


@dataclass(frozen=True)
class JlfdResult:
    position: np.ndarray
    mask: FailureMask
    iterations: int
    residual: float
    converged: bool
    agnostic_position: np.ndarray | None = None


class _FaultyModel:
    """Mean with elements in ``failed`` replaced by one unknown common stuck term.

    Failed elements reflect independently of the commanded profile, so together
    they add ``s_k(tau) * c`` with an unknown complex ``c``. Parameters are
    ``(x, y, z, gain_re, gain_im, c_re, c_im)``.
    """

    def __init__(self, model: CascadeModel, failed: np.ndarray):
        mask = FailureMask(failed.copy(), np.zeros(failed.size, dtype=complex))
        self.base = CascadeModel(model.anchor, model.ris.with_(failure=mask), model.spec, model.profiles)
        self.T = model.profiles.shape[0]

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        s = self.base.delay_phasor(theta[:3])
        body = complex(theta[3], theta[4]) * self.base.unit_mean(theta[:3])
        return body + complex(theta[5], theta[6]) * s[:, None] * np.ones(self.T)


def _element_terms(model: CascadeModel, position) -> np.ndarray:
    """Per-element cascade products ``a_ue,n a_in,n``; shape ``(N,)``."""
    from .geometry import nearfield_response

    a_ue = nearfield_response(model.elements, position, model.wavelength)
    a_in = nearfield_response(model.elements, model.anchor_ref, model.wavelength)
    return a_ue * a_in


def _set_residuals(z, cols, base, sets):
    """Normalized-free squared residuals of ``z`` fitted by ``[sum of healthy columns] + base``.

    Each failed element removes its commanded contribution with the same
    coefficient as every healthy element (the cascade gain), so a failure set
    changes one regressor instead of adding one per element.
    """
    total = cols.sum(axis=1)
    Qb, _ = np.linalg.qr(np.stack(base, axis=1))
    zt = z - Qb @ (Qb.conj().T @ z)
    out = np.empty(len(sets))
    for i, S in enumerate(sets):
        v = total - cols[:, list(S)].sum(axis=1) if S else total
        v = v - Qb @ (Qb.conj().T @ v)
        vv = np.vdot(v, v).real
        out[i] = np.vdot(zt, zt).real - (abs(np.vdot(v, zt)) ** 2 / vv if vv > 0 else 0.0)
    return out


def _child_residuals(z, cols, base, S):
    """Squared residuals of every one-element enlargement of ``S``; shape ``(N,)``."""
    Qb, _ = np.linalg.qr(np.stack(base, axis=1))
    zt = z - Qb @ (Qb.conj().T @ z)
    Ct = cols - Qb @ (Qb.conj().T @ cols)
    vt = Ct.sum(axis=1) - Ct[:, list(S)].sum(axis=1) if S else Ct.sum(axis=1)
    V = vt[:, None] - Ct  # (T, N)
    vv = np.einsum("tn,tn->n", V.conj(), V).real
    proj = np.abs(V.conj().T @ zt) ** 2 / np.maximum(vv, 1e-300)
    res = np.vdot(zt, zt).real - proj
    res[list(S)] = np.inf
    return res


def _select_failures(z, cols, base, sigma_z2, max_select, threshold, alpha=0.01, beam_width=16, branch=16):
    """Smallest set of failed elements that explains the combined samples.

    Breadth-limited search over candidate sets: sets of size ``d`` are grown
    from the ``beam_width`` best sets of size ``d - 1`` by their ``branch`` best
    one-element enlargements. The search stops at the first size whose best
    residual passes a chi-square goodness-of-fit test at level ``alpha``, or
    when growing the set no longer lowers the normalized residual by more than
    ``threshold``. ``base`` lists regressors fitted alongside the healthy sum.
    Returns the mask and whether the goodness-of-fit test passed.
    """
    T, N = cols.shape
    dof = 2 * (T - len(base) - 1)
    gof = chi2.ppf(1.0 - alpha, dof) if dof > 0 else -np.inf
    beam = [()]
    stats = 2.0 * _set_residuals(z, cols, base, beam) / sigma_z2
    passed = bool(stats[0] <= gof)
    best = ()
    for _ in range(max_select):
        if passed:
            break
        grown = {}
        for S in beam:
            res = _child_residuals(z, cols, base, S)
            for n in np.argsort(res)[:branch]:
                if np.isfinite(res[n]):
                    grown[tuple(sorted(S + (int(n),)))] = None
        if not grown:
            break
        cand = list(grown)
        cstats = 2.0 * _set_residuals(z, cols, base, cand) / sigma_z2
        order = np.argsort(cstats)
        if not stats.min() - cstats[order[0]] > threshold:
            break
        beam = [cand[i] for i in order[:beam_width]]
        stats = cstats[order[:beam_width]]
        best = beam[0]
        passed = bool(stats[0] <= gof)
    mask = np.zeros(N, dtype=bool)
    mask[list(best)] = True
    return mask, passed


def jlfd(
    obs: Observation,
    model: CascadeModel,
    grid: SearchGrid,
    false_alarm: float = 0.01,
    max_iter: int = 20,
    threshold: float | None = None,
    beam_width: int = 96,
    position_terms: bool = True,
) -> JlfdResult:
    """Joint localization and failure diagnosis by residual tests.

    Starting from the failure-agnostic ML estimate, each round (i) combines the
    subcarriers at the current delay estimate, (ii) searches for the smallest set
    of elements whose deviation from the commanded response explains the
    combined samples (see :func:`_select_failures`); every enlargement of the set
    must reduce the normalized residual by more than the Bonferroni threshold
    ``-2 ln(false_alarm / N)`` and (iii) re-localizes with the failed elements
    lumped into one unknown stuck term. Rounds stop when the mask is stable.
    ``position_terms`` adds the position derivatives of the commanded response to
    the fitted regressors so that a residual position error is not mistaken for
    failures.
    """
    if model.multi_rx:
        raise ValueError("jlfd supports single-antenna anchors only")
    y = _samples(obs)[:, :, 0]
    K, T = y.shape
    N = model.elements.shape[0]
    coeffs = model.coefficients  # (T, N)
    thr = -2.0 * np.log(false_alarm / N) if threshold is None else float(threshold)
    # rounding floor so that noiseless data yield finite statistics
    sigma2 = max(float(getattr(obs, "noise_var", 0.0)), (1e-10 * np.linalg.norm(y)) ** 2 / y.size)
    sigma_z2 = sigma2 / K
    # a k-sparse failure set is unique only if 2k fits in the free observations
    n_base = 4 if position_terms else 1
    max_select = max(1, min(N, (T - n_base) // 2))

    agn = ml_localize(y, model, grid)
    position, gain, stuck = agn.position, agn.gain, 0j
    failed = np.zeros(N, dtype=bool)
    flat = y.ravel()
    residual = agn.residual
    converged = False
    it = 0
    h = 1e-4 * model.wavelength
    for it in range(1, max_iter + 1):
        z = model.delay_phasor(position).conj() @ y / K
        terms = _element_terms(model, position)
        cols = coeffs * terms[None, :]
        base = [np.ones(T, dtype=complex)]
        if position_terms:
            for ax in range(3):
                e = np.zeros(3)
                e[ax] = h
                d = _element_terms(model, position + e) - _element_terms(model, position - e)
                base.append(coeffs @ d / (2 * h))
        new, passed = _select_failures(z, cols, base, sigma_z2, max_select, thr, alpha=false_alarm, beam_width=beam_width)
        if np.array_equal(new, failed) and (it > 1 or not new.any()):
            converged = passed or not new.any()
            if not new.any():
                position, gain, residual = agn.position, agn.gain, agn.residual
            break
        failed = new
        if not failed.any():
            position, gain, residual = agn.position, agn.gain, agn.residual
            continue
        fm = _FaultyModel(model, failed)
        theta0 = np.r_[position, gain.real, gain.imag, stuck.real, stuck.imag]
        sol = gauss_newton(flat, fm, theta0, max_iter=30, tol=1e-10)
        position = sol.theta[:3].copy()
        gain = complex(sol.theta[3], sol.theta[4])
        stuck = complex(sol.theta[5], sol.theta[6])
        residual = sol.residual
    mask = FailureMask(failed, np.zeros(N, dtype=complex))
    return JlfdResult(position, mask, it, float(residual), converged, agn.position)


# --------------------------------------------------------------------------- RIS pose


class UnderdeterminedError(ValueError):
    """Raised when the measurements cannot fix all RIS pose unknowns."""


@dataclass(frozen=True)
class AnchorMeasurement:
    """Measurements of the BS -> RIS -> anchor path at one anchor.

    ``toa`` is the total propagation time (s). ``aod_az``/``aod_el`` give the
    anchor direction in the RIS frame: azimuth in the local x-y plane from local
    x, elevation from that plane towards the local normal.
    """

    anchor_id: int
    toa: float | None = None
    aod_az: float | None = None
    aod_el: float | None = None
    toa_std: float = 1e-10
    aod_std: float = 1e-3

    def __post_init__(self):
        if self.toa is not None and not self.toa > 0:
            raise ValueError("toa must be > 0")
        if (self.aod_az is None) != (self.aod_el is None):
            raise ValueError("aod needs both azimuth and elevation")
        if self.aod_el is not None and abs(self.aod_el) > np.pi / 2:
            raise ValueError("elevation must lie in [-pi/2, pi/2]")

    @property
    def has_aod(self) -> bool:
        return self.aod_az is not None


def _direction(az, el) -> np.ndarray:
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def simulate_anchor_measurements(
    ris: Pose, bs: Pose, anchors, with_aod=True, toa_std: float = 0.0, aod_std: float = 0.0, rng_seed=None
) -> list[AnchorMeasurement]:
    """Forward model of :func:`ris_pose_calibrate` with optional Gaussian noise."""
    rng = np.random.default_rng(rng_seed)
    bs_p = bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)
    out = []
    for i, a in enumerate(anchors):
        a = a.position if isinstance(a, Pose) else np.asarray(a, dtype=float)
        toa = (np.linalg.norm(bs_p - ris.position) + np.linalg.norm(a - ris.position)) / SPEED_OF_LIGHT
        toa += toa_std * rng.standard_normal()
        aod = (None, None)
        use_aod = with_aod[i] if isinstance(with_aod, (list, tuple, np.ndarray)) else with_aod
        if use_aod:
            v = ris.orientation.T @ (a - ris.position)
            v /= np.linalg.norm(v)
            az = np.arctan2(v[1], v[0]) + aod_std * rng.standard_normal()
            el = np.arcsin(np.clip(v[2], -1, 1)) + aod_std * rng.standard_normal()
            aod = (float(az), float(np.clip(el, -np.pi / 2, np.pi / 2)))
        out.append(AnchorMeasurement(i, float(toa), *aod, toa_std=max(toa_std, 1e-12), aod_std=max(aod_std, 1e-9)))
    return out


def _check_observability(meas, anchor_pos):
    n_toa = sum(m.toa is not None for m in meas)
    n_aod = sum(m.has_aod for m in meas)
    if n_toa < 3:
        raise UnderdeterminedError(
            f"RIS position needs TOA from at least 3 anchors, got {n_toa}: missing TOA observables"
        )
    if n_aod < 2:
        raise UnderdeterminedError(
            f"RIS orientation needs AOD from at least 2 anchors, got {n_aod}: missing AOD observables"
        )
    toa_pts = np.array([anchor_pos[m.anchor_id] for m in meas if m.toa is not None])
    if np.linalg.matrix_rank(toa_pts[1:] - toa_pts[0], tol=1e-9) < 2:
        raise UnderdeterminedError("TOA anchors are collinear: RIS position is not observable")
    if n_toa + 2 * n_aod <= 6:
        raise UnderdeterminedError("number of geometric observations must exceed the 6 pose unknowns")


def ris_pose_calibrate(
    measurements: list[AnchorMeasurement], bs: Pose, anchors, n_starts: int = 8, rng_seed=0
) -> Pose:
    """Least-squares RIS pose from TOA path lengths and in-frame AOD directions.

    The position is first fitted to the TOA ellipsoids from several starts; the
    orientation is then initialized by aligning measured and implied AOD
    directions (SVD solution of Wahba's problem), and both are refined jointly.
    """
    anchor_pos = np.array([a.position if isinstance(a, Pose) else np.asarray(a, dtype=float) for a in anchors])
    bs_p = bs.position if isinstance(bs, Pose) else np.asarray(bs, dtype=float)
    _check_observability(measurements, anchor_pos)
    toa = [(anchor_pos[m.anchor_id], m.toa * SPEED_OF_LIGHT, m.toa_std * SPEED_OF_LIGHT) for m in measurements if m.toa is not None]
    aod = [(anchor_pos[m.anchor_id], _direction(m.aod_az, m.aod_el), m.aod_std) for m in measurements if m.has_aod]

    def r_toa(p):
        return np.array([(np.linalg.norm(bs_p - p) + np.linalg.norm(a - p) - L) / s for a, L, s in toa])

    def r_aod(p, rv):
        Rt = Rotation.from_rotvec(rv).as_matrix().T
        out = []
        for a, d, s in aod:
            v = Rt @ (a - p)
            out.append((v / np.linalg.norm(v) - d) / s)
        return np.concatenate(out)

    rng = np.random.default_rng(rng_seed)
    scale = np.linalg.norm(anchor_pos - anchor_pos.mean(axis=0), axis=1).max() + np.linalg.norm(bs_p - anchor_pos.mean(axis=0))
    starts = [anchor_pos.mean(axis=0), 0.5 * (anchor_pos.mean(axis=0) + bs_p)]
    starts += [anchor_pos.mean(axis=0) + scale * rng.standard_normal(3) for _ in range(max(n_starts - 2, 0))]
    best = None
    for p0 in starts:
        sol = least_squares(r_toa, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        p = sol.x
        # orientation from Wahba's problem
        world = np.array([(a - p) / np.linalg.norm(a - p) for a, _, _ in aod])
        local = np.array([d for _, d, _ in aod])
        U, _, Vt = np.linalg.svd(world.T @ local)
        R0 = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
        rv0 = Rotation.from_matrix(R0).as_rotvec()

        def resid(x):
            return np.concatenate([r_toa(x[:3]), r_aod(x[:3], x[3:])])

        joint = least_squares(resid, np.r_[p, rv0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
        if best is None or joint.cost < best.cost:
            best = joint
    R = Rotation.from_rotvec(best.x[3:]).as_matrix()
    # re-orthonormalize for the Pose check
    U, _, Vt = np.linalg.svd(R)
    return Pose(best.x[:3], U @ Vt)
