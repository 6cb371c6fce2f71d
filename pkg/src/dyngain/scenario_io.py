"""Scenario documents (TOML) and the bundled presets."""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from dyngain.errors import ConfigError, DynGainError
from dyngain.gain_schedule import make_gain, make_kf
from dyngain.plants import make_plant
from dyngain.sim import PDController, Scenario, make_disturbance

TOP_LEVEL_KEYS = {
    "name", "description", "t0", "horizon", "step", "log_every", "stiffness_limit",
    "max_substeps", "tolerance", "observer_init", "baseline_gain", "qd_max",
    "plant", "initial", "controller", "disturbance", "kf", "gain",
}
REQUIRED_TABLES = ("plant", "initial", "controller", "disturbance", "kf", "gain")


def _table(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}: missing table [{key}]")
    value = doc[key]
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: [{key}] must be a table")
    return dict(value)


def _kind(table, key, where):
    try:
        return table.pop("kind")
    except KeyError:
        raise ConfigError(f"{where}: field '{key}.kind' is required") from None


def scenario_from_dict(doc: dict, where: str = "<scenario>") -> Scenario:
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown top-level field(s) {sorted(unknown)}")
    tables = {key: _table(doc, key, where) for key in REQUIRED_TABLES}
    section = "plant"
    try:
        plant = make_plant(_kind(tables["plant"], "plant", where), tables["plant"])
        n = plant.n_dof
        section = "initial"
        init = tables["initial"]
        q0 = init.pop("q")
        qd0 = init.pop("qd", [0.0] * n)
        if init:
            raise ConfigError(f"unknown field(s) {sorted(init)}")
        section = "controller"
        ctrl = tables["controller"]
        controller = PDController(
            kp=ctrl.pop("kp", 100.0),
            kd=ctrl.pop("kd", 20.0),
            setpoint=ctrl.pop("setpoint", q0),
            feedforward=bool(ctrl.pop("feedforward", True)),
        )
        if ctrl:
            raise ConfigError(f"unknown field(s) {sorted(ctrl)}")
        section = "disturbance"
        dist = make_disturbance(_kind(tables["disturbance"], "disturbance", where), tables["disturbance"], n)
        section = "kf"
        t0 = float(doc.get("t0", 0.0))
        kf = make_kf(_kind(tables["kf"], "kf", where), tables["kf"], t0=t0)
        section = "gain"
        gain = make_gain(_kind(tables["gain"], "gain", where), tables["gain"])
        section = "scenario"
        baseline = doc.get("baseline_gain")
        return Scenario(
            name=str(doc.get("name", "unnamed")),
            description=str(doc.get("description", "")),
            plant=plant,
            controller=controller,
            disturbance=dist,
            kf=kf,
            gain=gain,
            q0=q0,
            qd0=qd0,
            qd_max=float(doc["qd_max"]) if "qd_max" in doc else 10.0,
            horizon=float(doc.get("horizon", 10.0)),
            step=float(doc.get("step", 1e-4)),
            log_every=int(doc.get("log_every", 10)),
            stiffness_limit=float(doc.get("stiffness_limit", 0.1)),
            max_substeps=int(doc.get("max_substeps", 1000)),
            tolerance=float(doc.get("tolerance", 1e-3)),
            observer_init_policy=doc.get("observer_init", "cancel"),
            baseline_gain=None if baseline is None else float(baseline),
        )
    except ConfigError as exc:
        if str(exc).startswith(where):
            raise
        raise ConfigError(f"{where}: [{section}] {exc}") from None
    except (DynGainError, KeyError, TypeError, ValueError) as exc:
        detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        raise ConfigError(f"{where}: [{section}] {detail}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    return loads_scenario(text, where=str(path))


def loads_scenario(text: str, where: str = "<scenario>") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return scenario_from_dict(doc, where)


def _floats(arr):
    return [float(v) for v in np.asarray(arr, dtype=float).reshape(-1)]


def scenario_to_dict(scn: Scenario) -> dict:
    """Canonical document form; ``scenario_from_dict`` inverts it exactly."""
    doc = {
        "name": scn.name,
        "description": scn.description,
        "t0": float(scn.t0),
        "horizon": float(scn.horizon),
        "step": float(scn.step),
        "log_every": int(scn.log_every),
        "stiffness_limit": float(scn.stiffness_limit),
        "max_substeps": int(scn.max_substeps),
        "tolerance": float(scn.tolerance),
        "observer_init": scn.observer_init_policy.value,
        "qd_max": float(scn.qd_max),
    }
    if scn.baseline_gain is not None:
        doc["baseline_gain"] = float(scn.baseline_gain)
    doc["plant"] = {"kind": scn.plant.kind, **{k: float(v) for k, v in scn.plant.params().items()}}
    doc["initial"] = {"q": _floats(scn.q0), "qd": _floats(scn.qd0)}
    doc["controller"] = {
        "kp": _floats(scn.controller.kp),
        "kd": _floats(scn.controller.kd),
        "setpoint": _floats(scn.controller.setpoint),
        "feedforward": bool(scn.controller.feedforward),
    }
    dist = {"kind": scn.disturbance.kind, **scn.disturbance.params()}
    if dist["kind"] == "zero":
        dist.pop("n")
    doc["disturbance"] = dist
    doc["kf"] = {"kind": scn.kf.kind, **scn.kf.params()}
    doc["gain"] = {"kind": scn.gain.kind, **scn.gain.params()}
    return doc


def dumps_scenario(scn: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(scn))


def save_scenario(scn: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(dumps_scenario(scn))
    return path


def preset_names() -> list[str]:
    root = resources.files("dyngain") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_path(name: str):
    root = resources.files("dyngain") / "presets"
    candidate = root / f"{name}.toml"
    if not candidate.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return candidate


def load_preset(name: str) -> Scenario:
    return loads_scenario(preset_path(name).read_text(), where=f"preset:{name}")


def resolve_scenario(ref: str) -> Scenario:
    """A path to a TOML file, or the name of a bundled preset."""
    path = Path(ref)
    if path.suffix == ".toml" or path.exists():
        return load_scenario(path)
    return load_preset(ref)

