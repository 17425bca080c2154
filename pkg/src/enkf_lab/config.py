"""JSON run configuration: strict schema, defaults, and conversion to runtime objects.

A config document is a JSON object whose sections are all optional; any key
not listed in the schema is rejected. Matrices are nested arrays and model
perturbations are referenced by registered name.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigurationError
from .experiments import EPS_SLOPE_BAND, J_SLOPE_BAND, TEST_FUNCTIONS, SweepConfig
from .models import ComponentwisePerturbation, PerturbedAffineFamily

DEFAULT_EPSILONS = [0.0, 0.02, 0.05, 0.1, 0.2, 0.4]

DEFAULTS: dict = {
    "seed": 0,
    "n_steps": 10,
    "init_mean": [0.0],
    "init_cov": [[1.0]],
    "data_epsilon": 0.0,
    "model": {
        "a_matrix": [[0.9]],
        "b_vector": [0.0],
        "h_matrix": [[1.0]],
        "h_offset": [0.0],
        "sigma": [[0.5]],
        "gamma": [[0.5]],
        "psi_perturbation": {"kind": "sin", "frequency": 1.0},
        "h_perturbation": {"kind": "tanh", "frequency": 1.0},
        "epsilon": 0.0,
    },
    "grid": {"n_cells": 2000, "n_y_cells": None, "n_std": 6.0, "pad": 1.0},
    "filter": {"name": "enkf", "particles": 1000, "mean_field_particles": 100_000},
    "sweep_j": {
        "j_values": [16, 64, 256, 1024, 4096],
        "epsilon_values": [0.0],
        "n_replicates": 100,
        "test_functions": ["identity", "tanh", "square_clipped"],
        "slope_band": list(J_SLOPE_BAND),
    },
    "sweep_eps": {
        "epsilon_values": DEFAULT_EPSILONS,
        "slope_band": list(EPS_SLOPE_BAND),
        "refinement_check": True,
    },
}

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_band = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}
_epsilons = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1}
_perturbation = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {"kind": {"enum": ["sin", "tanh", "zero"]}, "frequency": _number},
}


def _obj(properties: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": properties}


SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "n_steps": {"type": "integer", "minimum": 1},
    "init_mean": _vector,
    "init_cov": _matrix,
    "data_epsilon": {"type": "number", "minimum": 0, "maximum": 1},
    "model": _obj({
        "a_matrix": _matrix,
        "b_vector": _vector,
        "h_matrix": _matrix,
        "h_offset": _vector,
        "sigma": _matrix,
        "gamma": _matrix,
        "psi_perturbation": _perturbation,
        "h_perturbation": _perturbation,
        "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
    }),
    "grid": _obj({
        "n_cells": {"type": "integer", "minimum": 10},
        "n_y_cells": {"type": ["integer", "null"], "minimum": 10},
        "n_std": {"type": "number", "exclusiveMinimum": 0},
        "pad": {"type": "number", "minimum": 0},
    }),
    "filter": _obj({
        "name": {"enum": ["grid", "kalman", "enkf", "mean-field", "pf"]},
        "particles": {"type": "integer", "minimum": 2},
        "mean_field_particles": {"type": "integer", "minimum": 2},
    }),
    "sweep_j": _obj({
        "j_values": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "epsilon_values": _epsilons,
        "n_replicates": {"type": "integer", "minimum": 10},
        "test_functions": {"type": "array", "items": {"enum": sorted(TEST_FUNCTIONS)}, "minItems": 1},
        "slope_band": _band,
    }),
    "sweep_eps": _obj({
        "epsilon_values": _epsilons,
        "slope_band": _band,
        "refinement_check": {"type": "boolean"},
    }),
})


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(doc: dict) -> dict:
    """Check ``doc`` against the strict schema and return it merged onto the defaults."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
    return _merge(DEFAULTS, doc)


def load_config(path=None, seed: int | None = None) -> dict:
    """Read and validate a JSON config (defaults when ``path`` is None); ``seed`` overrides the file."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{p}: top level must be a JSON object")
    cfg = validate(doc)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def family_from_config(cfg: dict) -> PerturbedAffineFamily:
    m = cfg["model"]
    d, k = len(m["a_matrix"]), len(m["h_matrix"])
    try:
        return PerturbedAffineFamily(
            m["a_matrix"], m["b_vector"], m["h_matrix"], m["h_offset"], m["sigma"], m["gamma"],
            psi_perturbation=ComponentwisePerturbation(
                m["psi_perturbation"]["kind"], d, m["psi_perturbation"].get("frequency", 1.0)),
            h_perturbation=ComponentwisePerturbation(
                m["h_perturbation"]["kind"], k, m["h_perturbation"].get("frequency", 1.0)),
            epsilon=m["epsilon"],
        )
    except ValueError as exc:
        raise ConfigurationError(f"invalid model: {exc}") from None


def _common(cfg: dict) -> dict:
    g = cfg["grid"]
    return dict(
        family=family_from_config(cfg),
        init_mean=tuple(cfg["init_mean"]),
        init_cov=tuple(tuple(r) for r in cfg["init_cov"]),
        n_steps=cfg["n_steps"],
        base_seed=cfg["seed"],
        data_epsilon=cfg["data_epsilon"],
        n_cells=g["n_cells"],
        n_y_cells=g["n_y_cells"],
        n_std=g["n_std"],
        pad=g["pad"],
    )


def sweep_j_config(cfg: dict) -> SweepConfig:
    s = cfg["sweep_j"]
    return SweepConfig(
        **_common(cfg),
        j_values=tuple(s["j_values"]),
        epsilon_values=tuple(s["epsilon_values"]),
        n_replicates=s["n_replicates"],
        test_functions=tuple(s["test_functions"]),
        j_slope_band=tuple(s["slope_band"]),
    )


def sweep_eps_config(cfg: dict) -> SweepConfig:
    s = cfg["sweep_eps"]
    return SweepConfig(
        **_common(cfg),
        j_values=(),
        epsilon_values=tuple(s["epsilon_values"]),
        test_functions=tuple(cfg["sweep_j"]["test_functions"]),
        eps_slope_band=tuple(s["slope_band"]),
        refinement_check=s["refinement_check"],
    )
