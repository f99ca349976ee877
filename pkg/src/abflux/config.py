"""Scenario configs: JSON documents checked against a schema.

A config has a ``scenario`` kind, a ``units`` block (hbar, q, m), a
scenario-specific ``model`` block (geometry, gauge, packet or initial state),
``run`` controls and an ``output`` block.  Defaults are filled in after
validation so the stored config is complete and its hash is stable.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

SCENARIOS = ("classical-wall", "classical-cavity", "quantum-wall", "flux-line-cavity",
             "lattice-diffraction", "flux-grid-landau", "emergence")


class ConfigError(ValueError):
    """Config is malformed or violates a model precondition."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_num_or_list = {"anyOf": [_num, {"type": "array", "items": _num}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


MODEL_SCHEMAS = {
    "classical-wall": _obj({
        "phi_B": _num, "w": {"type": "number", "minimum": 0}, "x0": _num,
        "momenta": _num_or_list, "angles_deg": _num_or_list, "lead": _pos,
    }, ["phi_B"]),
    "classical-cavity": _obj({
        "L_cav": _pos, "D": _pos, "phi_B": _num, "w": {"type": "number", "minimum": 0},
        "initial": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        "t_max": _pos, "n_record": _int_pos,
    }, ["L_cav", "D", "phi_B", "initial"]),
    "quantum-wall": _obj({
        "phi_B": _num, "k_x": _num_or_list, "k_y": _num, "threshold": {"type": "boolean"},
        "nx": _int_pos, "ny": _int_pos, "a": _pos, "sigma_x": _pos,
        "absorb_margin": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "absorb_ratio": _pos, "courant": _pos, "clearance": _pos,
    }, ["phi_B"]),
    "flux-line-cavity": _obj({
        "L_cav": _pos, "D": _pos, "Phi_B": _num, "a": _pos, "outer": _pos,
        "k": _int_pos, "min_inside": {"type": "number", "minimum": 0, "maximum": 1},
        "control_fluxon": {"type": "boolean"},
    }, ["Phi_B"]),
    "lattice-diffraction": _obj({
        "Phi_B": _num, "k": _vec2, "L": _pos, "periods": _int_pos, "a": _pos,
        "sigma_x": _pos, "room": _pos, "courant": _pos, "mirror": {"type": "boolean"},
    }, ["Phi_B", "k"]),
    "flux-grid-landau": _obj({
        "B": _num, "L": _pos, "domain": _pos, "a": _pos, "k": _int_pos, "n_levels": _int_pos,
    }, ["B", "L"]),
    "emergence": _obj({
        "B0": _num, "alpha": _num, "L": _pos, "a": _pos, "domain": _pos, "cell": _pos,
        "speed": _pos, "sigma": {"anyOf": [_pos, {"type": "null"}]}, "orbit_center": _vec2,
        "duration": {"anyOf": [_pos, {"type": "null"}]}, "dt": _pos,
        "window_crossings": _int_pos, "min_spacings": _pos, "max_spread_ratio": _pos,
    }),
}

MODEL_DEFAULTS = {
    "classical-wall": {"w": 0.0, "x0": 0.0, "momenta": [0.5, 1.0, 1.5, 2.5, 3.0],
                       "angles_deg": [0.0, 30.0, 60.0], "lead": 1.0},
    "classical-cavity": {"w": 0.0, "n_record": 2000},
    "quantum-wall": {"k_x": [1.6, 2.8, 3.2, 4.0, 5.0], "k_y": 0.0, "threshold": False,
                     "nx": 512, "ny": 256, "a": 0.125, "sigma_x": 4.5, "absorb_margin": 0.15,
                     "absorb_ratio": 0.15, "courant": 0.5, "clearance": 4.0},
    "flux-line-cavity": {"L_cav": 1.0, "D": 2.0, "a": 1.0 / 33, "outer": 1.5, "k": 10,
                         "min_inside": 0.9, "control_fluxon": True},
    "lattice-diffraction": {"L": 1.0, "periods": 8, "a": 1.0 / 16, "sigma_x": 2.0, "room": 10.0,
                            "courant": 0.5, "mirror": True},
    "flux-grid-landau": {"domain": 10.0, "k": 60, "n_levels": 3},
    "emergence": {},
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "scenario": {"enum": list(SCENARIOS)},
        "units": _obj({"hbar": _pos, "q": {"type": "number", "not": {"const": 0}}, "m": _pos}),
        "model": {"type": "object"},
        "run": _obj({
            "seed": {"type": "integer", "minimum": 0},
            "workers": _int_pos,
            "budget_s": _pos,
            "tolerances": {"type": "object", "additionalProperties": _num},
        }),
        "output": _obj({"dir": {"type": "string"}, "figures": {"type": "boolean"},
                        "states": {"type": "boolean"}}),
    },
    "required": ["scenario", "model"],
    "additionalProperties": False,
}


def _check(instance, schema, where: str):
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path)
        loc = f"{where}.{path}" if path else where
        raise ConfigError(f"{loc}: {exc.message}") from None


def validate_config(cfg: dict) -> dict:
    """Schema-check ``cfg`` and return a copy with every default filled in."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check(cfg, CONFIG_SCHEMA, "config")
    kind = cfg["scenario"]
    _check(cfg["model"], MODEL_SCHEMAS[kind], "model")
    out = copy.deepcopy(cfg)
    out.setdefault("name", kind)
    out.setdefault("description", "")
    out["units"] = {"hbar": 1.0, "q": 1.0, "m": 1.0, **cfg.get("units", {})}
    out["model"] = {**copy.deepcopy(MODEL_DEFAULTS[kind]), **cfg["model"]}
    out["run"] = {"seed": 0, "workers": 1, "tolerances": {}, **cfg.get("run", {})}
    out["output"] = {"figures": True, "states": False, **cfg.get("output", {})}
    return out


def load_config(path: str | Path) -> dict:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such config: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring the output block."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def set_path(cfg: dict, path: str, value) -> dict:
    """Copy of ``cfg`` with the dotted ``path`` set to ``value``."""
    out = copy.deepcopy(cfg)
    keys = path.split(".")
    node = out
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown parameter path {path!r}")
        node = node[k]
    if not isinstance(node, dict):
        raise ConfigError(f"unknown parameter path {path!r}")
    node[keys[-1]] = value
    return out


def get_path(cfg: dict, path: str):
    node = cfg
    for k in path.split("."):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown parameter path {path!r}")
        node = node[k]
    return node
