"""Run configuration: JSON schema, defaults and construction of the problem objects.

Energies are given in units of the bare gap Delta, times in tau = 2 pi / Delta
(when ``cycle.units`` is ``"tau"``), and the amplitude bound and parameter
box in units of Delta.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema
import numpy as np

from .controls import ControlProtocol
from .errors import ConfigError
from .liouville import LindbladModel, tls_preset
from .observables import MERIT_KINDS, MeritDefinition
from .optimizer import OptimizerSettings, symmetric_bounds
from .problem import ThermalMachineProblem
from .spectral import HarmonicGrid

DEFAULTS = {
    "model": {"delta": 1.0, "gamma": 1.0, "beta_hot": 1.0, "beta_cold": 2.0,
              "amplitude_bound": 0.2},
    "cycle": {"period": 1.0, "units": "tau", "stroke_fraction": 0.5},
    "spectral": {"n_harmonics": 65, "sample_factor": 4, "method": "svd",
                 "final_n_harmonics": 129},
    "controls": {"flavor": "clamped", "n_modes": 18, "cutoff": 8.0, "penalty_alpha": 1e12,
                 "n_pen": 64, "param_bound": 2.0},
    "merit": {"kind": "power_with_penalty", "weights": {}},
    "optimizer": {"max_iterations": 100, "gradient_tolerance": 1e-9, "step_tolerance": 1e-10,
                  "multistarts": 8, "seed": 0},
    "output": {"directory": "runs", "formats": ["csv", "json"]},
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {"delta": _POS, "gamma": _POS, "beta_hot": _POS, "beta_cold": _POS,
                           "amplitude_bound": _POS},
        },
        "cycle": {
            "type": "object", "additionalProperties": False,
            "properties": {"period": _POS, "units": {"enum": ["tau", "absolute"]},
                           "stroke_fraction": {"type": "number", "exclusiveMinimum": 0,
                                               "exclusiveMaximum": 1}},
        },
        "spectral": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_harmonics": {"type": "integer", "minimum": 1},
                           "final_n_harmonics": {"type": "integer", "minimum": 1},
                           "sample_factor": {"type": "integer", "minimum": 4},
                           "method": {"enum": ["svd", "qr"]}},
        },
        "controls": {
            "type": "object", "additionalProperties": False,
            "properties": {"flavor": {"enum": ["clamped", "direct_l1"]}, "n_modes": _INT1,
                           "cutoff": _POS, "penalty_alpha": {"type": "number", "minimum": 0},
                           "n_pen": _INT1, "param_bound": _POS,
                           "params": {"type": "array", "items": _NUM}},
        },
        "merit": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(MERIT_KINDS)},
                "weights": {"type": "object", "additionalProperties": False,
                            "properties": {"power": _NUM, "delta_power": _NUM,
                                           "heat": {"type": "array", "items": _NUM,
                                                    "minItems": 2, "maxItems": 2}}},
            },
        },
        "optimizer": {
            "type": "object", "additionalProperties": False,
            "properties": {"max_iterations": {"type": "integer", "minimum": 0},
                           "gradient_tolerance": _POS, "step_tolerance": _POS,
                           "multistarts": _INT1, "seed": {"type": "integer", "minimum": 0}},
        },
        "sweep": {
            "type": "object", "additionalProperties": False, "required": ["variable", "values"],
            "properties": {"variable": {"enum": ["period", "cutoff"]},
                           "values": {"type": "array", "items": _POS, "minItems": 1}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"},
                           "formats": {"type": "array",
                                       "items": {"enum": ["csv", "json"]}}},
        },
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _format_error(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{path}: {err.message}"


def validate_config(raw: dict) -> dict:
    """Validate a raw config and return it with all defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a JSON object")
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_format_error(e) for e in errors))
    cfg = _merge(DEFAULTS, raw)
    m = cfg["model"]
    if m["beta_hot"] >= m["beta_cold"]:
        raise ConfigError("model.beta_hot: must be smaller than model.beta_cold "
                          "(bath 1 is the hot bath)")
    for key in ("n_harmonics", "final_n_harmonics"):
        if cfg["spectral"][key] % 2 == 0:
            raise ConfigError(f"spectral.{key}: must be odd, got {cfg['spectral'][key]}")
    params = cfg["controls"].get("params")
    if params is not None and len(params) != 2 * cfg["controls"]["n_modes"] + 1:
        raise ConfigError(f"controls.params: expected {2 * cfg['controls']['n_modes'] + 1} "
                          f"values for n_modes={cfg['controls']['n_modes']}, got {len(params)}")
    kind = cfg["merit"]["kind"]
    if kind == "composed" and not cfg["merit"]["weights"]:
        raise ConfigError("merit.weights: composed merit needs at least one weight")
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw)


def with_sweep_value(cfg: dict, value: float) -> dict:
    """Copy of ``cfg`` with the sweep variable set to ``value`` and the sweep removed."""
    out = copy.deepcopy(cfg)
    sweep = out.pop("sweep")
    if sweep["variable"] == "period":
        out["cycle"]["period"] = value
    else:
        out["controls"]["cutoff"] = value
    return out


# -- construction -------------------------------------------------------------

def build_model(cfg: dict) -> LindbladModel:
    m = cfg["model"]
    return tls_preset(m["delta"], m["gamma"] * m["delta"], m["beta_hot"] / m["delta"],
                      m["beta_cold"] / m["delta"])


def period_of(cfg: dict) -> float:
    c = cfg["cycle"]
    if c["units"] == "tau":
        return c["period"] * 2 * np.pi / cfg["model"]["delta"]
    return c["period"]


def build_protocol(cfg: dict) -> ControlProtocol:
    c = cfg["controls"]
    delta = cfg["model"]["delta"]
    params = c.get("params")
    return ControlProtocol(period=period_of(cfg), n_modes=c["n_modes"],
                           delta=cfg["model"]["amplitude_bound"] * delta,
                           omega_max=c["cutoff"] * delta,
                           params=None if params is None else np.asarray(params, float),
                           stroke_fraction=cfg["cycle"]["stroke_fraction"], flavor=c["flavor"])


def build_merit(cfg: dict) -> MeritDefinition:
    return MeritDefinition(kind=cfg["merit"]["kind"], alpha=cfg["controls"]["penalty_alpha"],
                           n_pen=cfg["controls"]["n_pen"], weights=dict(cfg["merit"]["weights"]))


def build_problem(cfg: dict, n_harmonics: int | None = None) -> ThermalMachineProblem:
    s = cfg["spectral"]
    protocol = build_protocol(cfg)
    grid = HarmonicGrid(n_harmonics or s["n_harmonics"], protocol.period, s["sample_factor"])
    merit = build_merit(cfg)
    return ThermalMachineProblem(build_model(cfg), protocol, grid, merit,
                                 fluctuations=merit.needs_fluctuations, method=s["method"])


def build_settings(cfg: dict) -> OptimizerSettings:
    o = cfg["optimizer"]
    c = cfg["controls"]
    delta = cfg["model"]["amplitude_bound"] * cfg["model"]["delta"]
    n = 2 * c["n_modes"] + 1
    l1 = delta if c["flavor"] == "direct_l1" else None
    return OptimizerSettings(max_iterations=o["max_iterations"],
                             gradient_tolerance=o["gradient_tolerance"],
                             step_tolerance=o["step_tolerance"],
                             bounds=symmetric_bounds(n, c["param_bound"] * delta),
                             multistarts=o["multistarts"], seed=o["seed"], l1_radius=l1)
