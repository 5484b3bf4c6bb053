"""Scenario configuration (versioned YAML) and presets.

See ``docs/config_schema.md`` for the key reference. Unknown keys are
rejected so typos fail fast instead of silently falling back to defaults.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .model import SystemModel, effective_range, genuine_strength_for_range, reference_model

SCHEMA_VERSION = 1
CONTROLLERS = ("TUBE", "POTENTIAL", "TUBE_WITH_FALLBACK")

DEFAULTS: dict = {
    "version": SCHEMA_VERSION,
    "model": {
        "preset": "paper-v",
        "A": None,
        "B": None,
        "C_G": None,
        "C_I": None,
        "C_S": None,
        "Sigma_w": None,
        "Sigma_G": None,
        "Sigma_I": None,
        "Sigma_S": None,
        "pos_index": None,
        "dt": None,
    },
    "start": [0.0, 0.0, 0.0, 0.0],
    "goal": [300.0, 300.0, 0.0, 0.0],
    "attacker": {
        "enabled": True,
        "position": [100.0, 100.0],
        "eta": 200.0,
        "d": [10.0, 10.0],
        "r_effect": 30.0,
        "eta_S": None,
        "trigger_distance": None,
        "drift": [0.0, 0.0],
    },
    "estimator": {
        "P0_scale": 1.0,
        "gate_gps_on_alarm": True,
    },
    "detector": {"alpha": 0.01, "delta": 0.15},
    "alt": {
        "M": 5,
        "offset": [10.0, 10.0],
        "eta0": None,
        "P0_diag": [2500.0, 2500.0, 10000.0],
        "Sigma_wa_diag": [1e-2, 1e-2, 1.0],
    },
    "escape": {
        "controller": "POTENTIAL",
        "zeta": 3.0,
        "alpha": 0.01,
        "beta": 50000.0,
        "gamma": 0.95,
        "N_offset": 40,
        "min_horizon": 20,
        "Q_diag": [1e-4, 1e-4, 1e-3, 1e-3],
        "R_diag": [1e-2, 1e-2],
        "max_iter": 500,
        "gtol": 1e-4,
    },
    "robust": {"kp": 0.2, "kd": 0.9, "avoid_margin": 5.0},
    "constraints": {"v_max": 5.0, "u_max": 2.0},
    "sim": {"steps": 1200, "goal_tolerance": 5.0, "seed": 0},
}

PRESETS = {"paper-v": "paper_v.yaml"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"'{where}' must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, fully resolved scenario parameters."""

    raw: dict
    model: SystemModel

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.raw["start"], dtype=float)

    @property
    def goal(self) -> np.ndarray:
        return np.asarray(self.raw["goal"], dtype=float)

    @property
    def r_effect(self) -> float:
        """Effective range; an explicit ``attacker.eta_S`` takes precedence over ``attacker.r_effect``."""
        att = self.raw["attacker"]
        if att["eta_S"] is None:
            return float(att["r_effect"])
        return effective_range(float(att["eta"]), self.model.C_S, self.model.eta_S)

    def section(self, name: str) -> dict:
        return self.raw[name]

    def with_overrides(self, **sections) -> "ScenarioConfig":
        """Copy with nested overrides, e.g. ``cfg.with_overrides(attacker={'r_effect': 50})``."""
        return from_dict(_merge(self.raw, sections))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _build_model(raw: dict) -> SystemModel:
    m = raw["model"]
    att = raw["attacker"]
    if m["preset"] not in (None, "paper-v"):
        raise ConfigurationError(f"unknown model preset '{m['preset']}'")
    base = reference_model() if m["preset"] == "paper-v" else None
    fields = {}
    for key in ("A", "B", "C_G", "C_I", "C_S", "Sigma_w", "Sigma_G", "Sigma_I", "Sigma_S", "pos_index", "dt"):
        if m[key] is not None:
            fields[key] = m[key]
        elif base is not None:
            fields[key] = getattr(base, key)
        else:
            raise ConfigurationError(f"model.{key} is required when no preset is given")
    C_S = np.atleast_1d(np.asarray(fields["C_S"], dtype=float))
    if att["eta_S"] is not None:
        eta_S = float(att["eta_S"])
    else:
        eta_S = genuine_strength_for_range(float(att["eta"]), C_S, float(att["r_effect"]))
    return SystemModel(eta_S=eta_S, **fields)


def from_dict(data: dict) -> ScenarioConfig:
    data = dict(data or {})
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported config version {version} (expected {SCHEMA_VERSION})")
    raw = _merge(DEFAULTS, data)
    att = raw["attacker"]
    if not (att["eta"] > 0 and att["r_effect"] > 0):
        raise ConfigurationError("attacker eta and r_effect must be positive")
    if att["eta_S"] is not None and not att["eta_S"] > 0:
        raise ConfigurationError("attacker.eta_S must be positive")
    model = _build_model(raw)

    n = model.n
    if len(raw["start"]) != n or len(raw["goal"]) != n:
        raise ConfigurationError(f"start and goal must have {n} entries")
    k = len(model.pos_index)
    if len(att["position"]) != k or len(att["drift"]) != k:
        raise ConfigurationError(f"attacker position and drift must have {k} entries")
    if len(att["d"]) != model.m_G:
        raise ConfigurationError(f"attacker.d must have {model.m_G} entries")
    alt = raw["alt"]
    if len(alt["P0_diag"]) != k + 1 or len(alt["Sigma_wa_diag"]) != k + 1 or len(alt["offset"]) != k:
        raise ConfigurationError("alt prior sizes must match the position dimension")
    esc = raw["escape"]
    if esc["controller"] not in CONTROLLERS:
        raise ConfigurationError(f"escape.controller must be one of {CONTROLLERS}")
    if len(esc["Q_diag"]) != n or len(esc["R_diag"]) != model.m_u:
        raise ConfigurationError("escape.Q_diag / R_diag sizes do not match the model")
    if min(esc["Q_diag"]) <= 0 or min(esc["R_diag"]) <= 0:
        raise ConfigurationError("escape weights must be positive")
    if not 0.5 < esc["gamma"] < 1.0:
        raise ConfigurationError("escape.gamma must lie in (0.5, 1)")
    det = raw["detector"]
    if not (0 < det["alpha"] < 1 and 0 < det["delta"] < 1):
        raise ConfigurationError("detector alpha and delta must lie in (0, 1)")
    rob = raw["robust"]
    if rob["kp"] <= 0 or rob["kd"] <= 0:
        raise ConfigurationError("robust gains must be positive")
    if int(raw["sim"]["steps"]) < 0:
        raise ConfigurationError("sim.steps must be nonnegative")
    return ScenarioConfig(raw=raw, model=model)


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return from_dict(data or {})


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset '{name}' (known: {', '.join(PRESETS)})")
    text = resources.files("spoofguard").joinpath("presets").joinpath(PRESETS[name]).read_text(encoding="utf-8")
    return from_dict(yaml.safe_load(text))
