"""Named experiments, counter-based sub-seeding, parallel evaluation and CSV output.

Every Monte-Carlo trial draws its randomness from ``subseed(seed, name, trial)``,
so a run gives the same rows whatever the number of worker processes. Each
experiment is split into independent tasks (top-level functions, so that they
can be shipped to worker processes) and the reductions run in the parent in a
fixed order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..bounds import (
    ConvergenceError,
    default_starts,
    failure_report,
    matched_peb,
    mismatch_report,
    pseudo_true,
)
from ..channel import (
    CascadeModel,
    FixedHeightModel,
    add_noise,
    cascade_mean,
    noise_variance,
    random_profiles,
    sample_failure_mask,
    true_theta,
    tx_power_for_snr,
)
from ..coupling import mutual_impedance_matrix, noisy_calibration, z_to_s
from ..estimators import SearchGrid, jlfd
from ..geometry import ArrayLayout, GeometryError, apply_geometry_error
from ..linklevel import (
    InfeasibleSplitError,
    UncertaintyRegion,
    comm_rate,
    energy_split,
    pilot_beam_select,
    spectral_efficiency,
)
from .scenario import Scenario, ScenarioError


def subseed(master: int, name: str, trial) -> int:
    """64-bit seed derived from ``(master seed, experiment name, trial index)``."""
    h = hashlib.blake2b(f"{int(master)}|{name}|{trial}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    metric: str
    coords: tuple  # ((axis, value), ...) in the experiment's axis order
    value: float | None
    seed: int
    n_realizations: int
    status: str = "ok"

    def __post_init__(self):
        if self.value is not None and not np.isfinite(self.value):
            raise ValueError("row values must be finite; mark the row instead")
        if self.value is None and self.status == "ok":
            raise ValueError("a row without a value needs a status")


@dataclass(frozen=True)
class ExperimentInfo:
    name: str
    figure: str
    summary: str
    axes: tuple
    run: Callable


def _pmap(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _rms(values) -> float:
    return float(np.sqrt(np.mean(np.square(values))))


# --------------------------------------------------------------------------- geometry mismatch


def _geo_task(args):
    scn, W, power, err = args
    spec = scn.signal.with_power(power)
    true_model = CascadeModel(scn.anchor, scn.ris, spec, W)
    theta = true_theta(scn.anchor, scn.ue, scn.ris, spec)
    sigma2 = noise_variance(spec)
    if err is None:
        return matched_peb(true_model, theta, sigma2), None, "ok"
    assumed = scn.ris.with_(pose=apply_geometry_error(scn.ris.pose, GeometryError(*err)))
    try:
        rep = mismatch_report(true_model, theta, CascadeModel(scn.anchor, assumed, spec, W), sigma2)
    except ConvergenceError as exc:
        bias = float(np.linalg.norm(exc.best.position - scn.ue))
        return None, bias, "diverged"
    return rep.lb, rep.asymptotic_peb, "ok"


def run_geo_mismatch(scn: Scenario, seed: int, workers: int) -> list[ResultRow]:
    name = "exp-geo-mismatch"
    W = random_profiles(scn.ris.n_elements, scn.signal.n_transmissions, subseed(seed, name, "profiles"))
    powers = [float(p) for p in scn.sweep["tx_power_dbm"]]
    errors = [(float(e["err_pos"]), float(e["err_ori"])) for e in scn.sweep["geometry_errors"]]
    tasks = [(scn, W, p, None) for p in powers]
    tasks += [(scn, W, p, e) for e in errors for p in powers]
    if (0.0, 0.0) not in errors:
        tasks.append((scn, W, max(powers), (0.0, 0.0)))
    out = _pmap(_geo_task, tasks, workers)
    rows = []
    for (_, _, p, e), (val, bias, status) in zip(tasks, out):
        if e is None:
            rows.append(ResultRow(name, "peb", (("tx_power_dbm", p), ("err_pos", 0.0), ("err_ori", 0.0)), val, seed, 1))
            continue
        if e in errors:
            rows.append(ResultRow(name, "lb", (("tx_power_dbm", p), ("err_pos", e[0]), ("err_ori", e[1])),
                                  val, seed, 1, status))
        if p == max(powers):
            rows.append(ResultRow(name, "asymptotic_peb", (("tx_power_dbm", None), ("err_pos", e[0]), ("err_ori", e[1])),
                                  bias, seed, 1, status))
    return rows


# --------------------------------------------------------------------------- pixel failures


def _failure_task(args):
    scn, W, spec, p_fail, seed = args
    mask = sample_failure_mask(scn.ris.n_elements, p_fail, seed)
    try:
        rep = failure_report(scn.anchor, scn.ue, scn.ris, spec, W, mask)
    except ConvergenceError as exc:
        return None, float(np.linalg.norm(exc.best.position - scn.ue)), "diverged"
    return float(np.trace(rep.mcrb_position)), rep.asymptotic_peb, "ok"


def _lb_rows(results, ratios):
    """RMS over realizations of rescaled LBs; ``results`` are (trace, bias, status)."""
    status = "ok" if all(r[2] == "ok" for r in results) else "diverged"
    good = [r for r in results if r[0] is not None]
    if not good:
        return [None] * len(ratios), status
    tr = np.array([r[0] for r in good])
    b2 = np.array([r[1] ** 2 for r in good])
    return [float(np.sqrt(np.mean(tr / q + b2))) for q in ratios], status


def _snr_powers(scn: Scenario, snrs):
    return [tx_power_for_snr(scn.anchor, scn.ue, scn.ris, scn.signal, s) for s in snrs]


def run_failure_bounds(scn: Scenario, seed: int, workers: int) -> list[ResultRow]:
    name = "exp-failure-bounds"
    n = scn.n_realizations
    W = random_profiles(scn.ris.n_elements, scn.signal.n_transmissions, subseed(seed, name, "profiles"))
    snrs = [float(s) for s in scn.sweep["snr_db"]]
    powers = _snr_powers(scn, snrs)
    ref = max(powers)
    spec = scn.signal.with_power(ref)
    ratios = [10 ** ((p - ref) / 10) for p in powers]
    p_values = [float(p) for p in scn.sweep["p_fail"]]
    tasks = [(scn, W, spec, p, subseed(seed, name, i * n + r)) for i, p in enumerate(p_values) for r in range(n)]
    out = _pmap(_failure_task, tasks, workers)
    theta = true_theta(scn.anchor, scn.ue, scn.ris, spec)
    peb_ref = matched_peb(CascadeModel(scn.anchor, scn.ris, spec, W), theta, noise_variance(spec))
    rows = []
    for s, q in zip(snrs, ratios):
        rows.append(ResultRow(name, "peb", (("snr_db", s), ("p_fail", 0.0)), peb_ref / np.sqrt(q), seed, 1))
    for i, p in enumerate(p_values):
        lbs, status = _lb_rows(out[i * n:(i + 1) * n], ratios)
        for s, v in zip(snrs, lbs):
            rows.append(ResultRow(name, "lb", (("snr_db", s), ("p_fail", p)), v, seed, n, status))
    return rows


# --------------------------------------------------------------------------- trade-off


def _tradeoff_task(args):
    scn, spec, region, beam_seed, p_fail, seed = args
    mask = sample_failure_mask(scn.ris.n_elements, p_fail, seed)
    faulty = scn.ris.with_(failure=mask)
    sel = pilot_beam_select(region, scn.tradeoff["T_p"], scn.anchor, scn.ue, faulty, spec, beam_seed)
    try:
        rep = failure_report(scn.anchor, scn.ue, scn.ris, spec, sel.profiles, mask)
        lb = (float(np.trace(rep.mcrb_position)), rep.asymptotic_peb, "ok")
    except ConvergenceError as exc:
        lb = (None, float(np.linalg.norm(exc.best.position - scn.ue)), "diverged")
    return lb, float(sel.powers[sel.index])


def run_tradeoff(scn: Scenario, seed: int, workers: int) -> list[ResultRow]:
    name = "exp-tradeoff"
    cfg = scn.tradeoff
    n = scn.n_realizations
    T, T_p, E_tot = cfg["T"], cfg["T_p"], cfg["E_tot"]
    region = UncertaintyRegion(scn.ue, cfg["region_half_widths"])
    beam_seed = subseed(seed, name, "beams")
    pilot_dbw = [float(p) for p in scn.sweep["pilot_power_dbw"]]
    ref = max(pilot_dbw)
    spec = scn.signal.with_power(ref + 30.0)
    p_values = [float(p) for p in scn.sweep["p_fail"]]
    tasks = [(scn, spec, region, beam_seed, p, subseed(seed, name, i * n + r))
             for i, p in enumerate(p_values) for r in range(n)]
    out = _pmap(_tradeoff_task, tasks, workers)
    ratios = [10 ** ((p - ref) / 10) for p in pilot_dbw]
    rows = []
    for i, p in enumerate(p_values):
        chunk = out[i * n:(i + 1) * n]
        lbs, status = _lb_rows([c[0] for c in chunk], ratios)
        for pp, lb in zip(pilot_dbw, lbs):
            coords = (("pilot_power_dbw", pp), ("p_fail", p))
            try:
                plan = energy_split(T, T_p, 10 ** (pp / 10), E_tot)
            except InfeasibleSplitError:
                rows.append(ResultRow(name, "lb", coords, None, seed, n, "infeasible"))
                rows.append(ResultRow(name, "rate", coords, None, seed, n, "infeasible"))
                continue
            rate = float(np.mean([comm_rate(plan, c[1], spec) for c in chunk]))
            rows.append(ResultRow(name, "lb", coords, lb, seed, n, status if lb is not None else "diverged"))
            rows.append(ResultRow(name, "rate", coords, rate, seed, n))
    return rows


# --------------------------------------------------------------------------- JLFD


def _grid(scn: Scenario) -> SearchGrid:
    g = scn.search_grid
    return SearchGrid(scn.ue + np.asarray(g["center_offset"], float), g["half_width"], g["n_points"])


def _jlfd_task(args):
    scn, W, spec, p_fail, seed = args
    mask_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    mask = sample_failure_mask(scn.ris.n_elements, p_fail, mask_seed)
    obs = add_noise(cascade_mean(scn.anchor, scn.ue, scn.ris.with_(failure=mask), spec, W), noise_seed)
    res = jlfd(obs, CascadeModel(scn.anchor, scn.ris, spec, W), _grid(scn))
    e_agn = float(np.sum((res.agnostic_position - scn.ue) ** 2))
    e_jlfd = float(np.sum((res.position - scn.ue) ** 2))
    return e_agn, e_jlfd, bool(np.array_equal(res.mask.failed, mask.failed))


def run_jlfd(scn: Scenario, seed: int, workers: int) -> list[ResultRow]:
    name = "exp-jlfd"
    n = scn.n_realizations
    W = random_profiles(scn.ris.n_elements, scn.signal.n_transmissions, subseed(seed, name, "profiles"))
    snrs = [float(s) for s in scn.sweep["snr_db"]]
    powers = _snr_powers(scn, snrs)
    ref = max(powers)
    ref_spec = scn.signal.with_power(ref)
    ratios = [10 ** ((p - ref) / 10) for p in powers]
    p_values = [float(p) for p in scn.sweep["p_fail"]]
    trial_tasks, lb_tasks = [], []
    for i, p in enumerate(p_values):
        for j, pw in enumerate(powers):
            spec = scn.signal.with_power(pw)
            base = (i * len(powers) + j) * n
            trial_tasks += [(scn, W, spec, p, subseed(seed, name, base + r)) for r in range(n)]
        lb_tasks += [(scn, W, ref_spec, p, subseed(seed, name, f"lb-{i}-{r}")) for r in range(n)]
    trials = _pmap(_jlfd_task, trial_tasks, workers)
    lbs = _pmap(_failure_task, lb_tasks, workers)
    theta = true_theta(scn.anchor, scn.ue, scn.ris, ref_spec)
    peb_ref = matched_peb(CascadeModel(scn.anchor, scn.ris, ref_spec, W), theta, noise_variance(ref_spec))
    rows = []
    for i, p in enumerate(p_values):
        lb_vals, lb_status = _lb_rows(lbs[i * n:(i + 1) * n], ratios)
        for j, (s, q) in enumerate(zip(snrs, ratios)):
            coords = (("snr_db", s), ("p_fail", p))
            base = (i * len(powers) + j) * n
            chunk = trials[base:base + n]
            rows.append(ResultRow(name, "rmse_agnostic", coords, float(np.sqrt(np.mean([c[0] for c in chunk]))), seed, n))
            rows.append(ResultRow(name, "rmse_jlfd", coords, float(np.sqrt(np.mean([c[1] for c in chunk]))), seed, n))
            rows.append(ResultRow(name, "mask_recovery_rate", coords, float(np.mean([c[2] for c in chunk])), seed, n))
            rows.append(ResultRow(name, "lb", coords, lb_vals[j], seed, n, lb_status if lb_vals[j] is not None else "diverged"))
            rows.append(ResultRow(name, "peb", coords, peb_ref / np.sqrt(q), seed, 1))
    return rows


# --------------------------------------------------------------------------- mutual coupling


def coupling_matrix(scn: Scenario, spacing_wavelengths: float) -> np.ndarray:
    lam = scn.signal.wavelength
    layout = ArrayLayout(scn.ris.layout.rows, scn.ris.layout.cols, spacing_wavelengths * lam)
    cfg = scn.coupling
    Z = mutual_impedance_matrix(layout, lam, cfg["dipole_length_wavelengths"] * lam, cfg["load_impedance_ohm"])
    return z_to_s(Z)


def _coupling_task(args):
    scn, W, spacing, sigma, seed = args
    lam = scn.signal.wavelength
    S = coupling_matrix(scn, spacing)
    layout = ArrayLayout(scn.ris.layout.rows, scn.ris.layout.cols, spacing * lam)
    true_ris = scn.ris.with_(layout=layout, coupling=S)
    S_hat = None if sigma is None else noisy_calibration(S, sigma, seed).S_hat
    # localization: the linear RIS fixes the UE only up to a rotation about its axis
    spec = scn.signal
    y = CascadeModel(scn.anchor, true_ris, spec, W).mean(true_theta(scn.anchor, scn.ue, true_ris, spec)).ravel()
    assumed = FixedHeightModel(CascadeModel(scn.anchor, true_ris.with_(coupling=S_hat), spec, W), scn.ue[2])
    th = np.r_[scn.ue[:2], true_theta(scn.anchor, scn.ue, true_ris, spec)[3:]]
    status = "ok"
    try:
        pt = pseudo_true(y, assumed, th, starts=default_starts(th, n_pos=2))
        theta_pt = pt.theta
    except ConvergenceError as exc:
        theta_pt, status = exc.best.theta, "diverged"
    bias = float(np.linalg.norm(theta_pt[:2] - scn.ue[:2]))
    se_spec = replace(spec, bandwidth_hz=scn.coupling["se_bandwidth_hz"], n_subcarriers=1,
                      tx_power_dbm=scn.coupling["se_tx_power_dbm"])
    se = spectral_efficiency(scn.ue, scn.anchor, true_ris, se_spec, S_hat)
    return bias, status, se.se, "ok" if se.converged else "max_iter"


def run_coupling(scn: Scenario, seed: int, workers: int) -> list[ResultRow]:
    name = "exp-coupling"
    n = scn.n_realizations
    W = random_profiles(scn.ris.n_elements, scn.signal.n_transmissions, subseed(seed, name, "profiles"))
    spacings = [float(s) for s in scn.sweep["spacing_wavelengths"]]
    cases = [None] + [float(s) for s in scn.sweep["calibration_sigma"]]
    keys, tasks = [], []
    for i, sp in enumerate(spacings):
        for c, sigma in enumerate(cases):
            reps = 1 if sigma is None else n
            for r in range(reps):
                keys.append((sp, sigma))
                tasks.append((scn, W, sp, sigma, subseed(seed, name, (i * len(cases) + c) * n + r)))
    out = _pmap(_coupling_task, tasks, workers)
    rows = []
    for sp in spacings:
        for sigma in cases:
            res = [o for k, o in zip(keys, out) if k == (sp, sigma)]
            coords = (("spacing_wavelengths", sp), ("calibration", "none" if sigma is None else sigma))
            peb_status = "ok" if all(o[1] == "ok" for o in res) else "diverged"
            se_status = "ok" if all(o[3] == "ok" for o in res) else "max_iter"
            rows.append(ResultRow(name, "asymptotic_peb", coords, _rms([o[0] for o in res]), seed, len(res), peb_status))
            rows.append(ResultRow(name, "se", coords, float(np.mean([o[2] for o in res])), seed, len(res), se_status))
    return rows


# --------------------------------------------------------------------------- registry and output


EXPERIMENTS: dict[str, ExperimentInfo] = {
    e.name: e
    for e in (
        ExperimentInfo("exp-geo-mismatch", "Fig. 2", "PEB and misspecified LB vs transmit power under RIS pose errors",
                       ("tx_power_dbm", "err_pos", "err_ori"), run_geo_mismatch),
        ExperimentInfo("exp-failure-bounds", "Fig. 3a", "PEB and failure LB vs SNR for several failure probabilities",
                       ("snr_db", "p_fail"), run_failure_bounds),
        ExperimentInfo("exp-tradeoff", "Fig. 3b", "LB and data rate vs pilot power under pixel failures",
                       ("pilot_power_dbw", "p_fail"), run_tradeoff),
        ExperimentInfo("exp-jlfd", "Fig. 4", "failure-agnostic ML vs JLFD RMSE with LB and PEB",
                       ("snr_db", "p_fail"), run_jlfd),
        ExperimentInfo("exp-coupling", "Fig. 5", "asymptotic PEB and SE vs RIS element spacing with mutual coupling",
                       ("spacing_wavelengths", "calibration"), run_coupling),
    )
}


def _sort_key(row: ResultRow):
    def k(v):
        if v is None:
            return (0, 0.0, "")
        if isinstance(v, str):
            return (2, 0.0, v)
        return (1, float(v), "")
    return (row.metric, tuple(k(v) for _, v in row.coords))


def run_experiment(name: str, scenario: Scenario, seed: int = 0, workers: int = 1, full: bool = False) -> list[ResultRow]:
    """Run experiment ``name`` on ``scenario``; rows are sorted by metric and sweep coordinates."""
    if name not in EXPERIMENTS:
        raise ScenarioError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    if scenario.experiment != name:
        raise ScenarioError(f"scenario {scenario.name!r} is written for {scenario.experiment}, not {name}")
    rows = EXPERIMENTS[name].run(scenario.at_scale(full), int(seed), max(1, int(workers)))
    return sorted(rows, key=_sort_key)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


def rows_to_csv(rows: list[ResultRow], name: str | None = None) -> str:
    """CSV text: experiment, metric, sweep axes, value, seed, n_realizations, status."""
    if name is None:
        name = rows[0].experiment if rows else None
    axes = list(EXPERIMENTS[name].axes) if name in EXPERIMENTS else sorted({a for r in rows for a, _ in r.coords})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "metric", *axes, "value", "seed", "n_realizations", "status"])
    for r in rows:
        c = dict(r.coords)
        w.writerow([r.experiment, r.metric, *(_fmt(c.get(a)) for a in axes), _fmt(r.value), r.seed, r.n_realizations, r.status])
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path, name: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(rows_to_csv(rows, name))
