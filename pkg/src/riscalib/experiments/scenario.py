"""Scenario files: JSON documents validated against the bundled schema."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..channel import RisPanel, SignalSpec
from ..geometry import ArrayLayout, Pose, rot_zyx, ula_positions


class ScenarioError(ValueError):
    """A scenario file could not be parsed or violates the schema."""


def schema() -> dict:
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def bundled_scenarios() -> dict[str, Path]:
    """Bundled scenario files keyed by scenario name (file stem)."""
    root = resources.files(__package__).joinpath("scenarios")
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def _resolve(node: dict, root: dict) -> dict:
    while "$ref" in node:
        ref = node["$ref"]
        if not ref.startswith("#/"):
            raise ScenarioError(f"unsupported schema reference {ref}")
        target = root
        for part in ref[2:].split("/"):
            target = target[part]
        node = {**target, **{k: v for k, v in node.items() if k != "$ref"}}
    return node


def _apply_defaults(instance, node: dict, root: dict):
    """Fill ``default`` values of object properties, recursively (in place)."""
    node = _resolve(node, root)
    if not isinstance(instance, dict):
        return
    for key, sub in node.get("properties", {}).items():
        sub = _resolve(sub, root)
        if key not in instance and "default" in sub:
            instance[key] = copy.deepcopy(sub["default"])
        if key in instance:
            _apply_defaults(instance[key], sub, root)


@dataclass(frozen=True)
class Scenario:
    name: str
    experiment: str
    signal: SignalSpec
    bs: Pose
    ue: np.ndarray
    ris: RisPanel
    sweep: dict
    n_realizations: int = 50
    bs_array: dict | None = None
    desk: dict | None = None
    tradeoff: dict | None = None
    search_grid: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=dict)
    spacing_wavelengths: float = 0.5
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def anchor(self) -> np.ndarray:
        """Known-side antenna positions ``(M, 3)``."""
        if self.bs_array is None:
            return self.bs.position[None, :]
        a = self.bs_array
        return ula_positions(
            a["n_antennas"], a["spacing_wavelengths"] * self.signal.wavelength, self.bs.position, a["axis"]
        )

    def at_scale(self, full: bool) -> "Scenario":
        """Apply the ``desk`` size overrides unless ``full`` is set."""
        if full or not self.desk:
            return self
        d = self.desk
        layout = self.ris.layout
        layout = ArrayLayout(d.get("ris_rows", layout.rows), d.get("ris_cols", layout.cols), layout.spacing)
        signal = replace(self.signal, n_subcarriers=d.get("n_subcarriers", self.signal.n_subcarriers))
        return replace(self, ris=self.ris.with_(layout=layout), signal=signal)

    def with_sweep(self, **axes) -> "Scenario":
        """Copy with some sweep axes replaced (e.g. a reduced grid for quick runs)."""
        return replace(self, sweep={**self.sweep, **axes})


def _build(doc: dict) -> Scenario:
    sig = SignalSpec(**doc["signal"])
    bs = doc["bs"]
    bs_pose = Pose(np.asarray(bs["position"], float), rot_zyx(*bs["euler_zyx_deg"]))
    r = doc["ris"]
    spacing = r["spacing_wavelengths"] * sig.wavelength
    ris = RisPanel(
        ArrayLayout(r["rows"], r["cols"], spacing),
        Pose(np.asarray(r["position"], float), rot_zyx(*r["euler_zyx_deg"])),
        pattern_exponent=r["pattern_exponent"],
    )
    trade = doc.get("tradeoff")
    if trade is not None and not trade["T_p"] < trade["T"]:
        raise ScenarioError("invalid scenario: field 'tradeoff.T_p': must be smaller than tradeoff.T")
    if trade is not None:
        # one pilot beam per pilot transmission
        sig = replace(sig, n_transmissions=trade["T_p"])
    ue = np.asarray(doc["ue"], float)
    if np.linalg.norm(ue - ris.centroid) == 0:
        raise ScenarioError("invalid scenario: field 'ue': coincides with the RIS centre")
    array = bs.get("array")
    if array is not None:
        array = {"spacing_wavelengths": 0.5, "axis": [1, 0, 0], **array}
    return Scenario(
        name=doc["name"],
        experiment=doc["experiment"],
        signal=sig,
        bs=bs_pose,
        ue=ue,
        ris=ris,
        sweep=doc["sweep"],
        n_realizations=doc["n_realizations"],
        bs_array=array,
        desk=doc.get("desk"),
        tradeoff=trade,
        search_grid=doc["search_grid"],
        coupling=doc["coupling"],
        spacing_wavelengths=r["spacing_wavelengths"],
        raw=doc,
    )


def parse_scenario(doc: dict) -> Scenario:
    """Validate a decoded scenario document, apply defaults and build a :class:`Scenario`."""
    sch = schema()
    doc = copy.deepcopy(doc)
    validator = jsonschema.Draft202012Validator(sch)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"invalid scenario: field '{where}': {e.message}")
    _apply_defaults(doc, sch, sch)
    try:
        return _build(doc)
    except ScenarioError:
        raise
    except ValueError as exc:  # invariants enforced by the domain types
        raise ScenarioError(f"invalid scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    """Read, validate and build a scenario from a JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: parse error: {exc.msg}") from exc
    return parse_scenario(doc)
