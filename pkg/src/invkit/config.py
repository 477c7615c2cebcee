"""TOML run configuration: schema, validation and the resolved (defaults filled) form."""

from __future__ import annotations

import copy
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


REQUIRED = object()
OPTIONAL = object()

SCHEMA = {
    "operator": {
        "kind": "identity",
        "shape": OPTIONAL,
        "kernel": OPTIONAL,
        "mask": OPTIONAL,
        "m": OPTIONAL,
        "seed": OPTIONAL,
        "ensemble": OPTIONAL,
        "factor": OPTIONAL,
        "n_angles": OPTIONAL,
        "n_detectors": OPTIONAL,
        "inner": OPTIONAL,
        "sigma": 0.0,
    },
    "regularizer": {"kind": "zero", "lam": 0.0, "inner_iters": 20},
    "solver": {
        "method": "ml_least_squares",
        "max_iters": 100,
        "tol": 1e-6,
        "step_size": OPTIONAL,
        "rho": 1.0,
        "lam": 0.0,
        "restarts": 4,
        "iterations": 200,
        "checkpoint_every": 0,
        "lr": 0.01,
        "steps": 200,
    },
    "model": {
        "kind": "unrolled",
        "checkpoint": "",
        "n_blocks": 5,
        "channels": 16,
        "depth": 3,
        "k": 16,
        "stages": 2,
        "hidden": 64,
        "inverse": "",
    },
    "training": {
        "regime": "paired_xy",
        "epochs": 10,
        "lr": 1e-3,
        "batch_size": 8,
        "sigma": OPTIONAL,
        "div": "mc:1:1e-3",
        "target_sigma": OPTIONAL,
    },
    "scenario": {"runs": [], "robustness": [], "matched": False},
    "output": {"timing": False, "pgm": True},
}

ROOT_KEYS = {"seed": 0}

RUN_KEYS = {
    "id": REQUIRED,
    "knowledge": REQUIRED,
    "regime": REQUIRED,
    "method": REQUIRED,
    "operator": OPTIONAL,
    "sigma": 0.01,
    "dataset": OPTIONAL,
    "perturbation": "",
    "feature": OPTIONAL,
    "params": OPTIONAL,
}


def _resolve_table(name, given, schema):
    if not isinstance(given, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    out = {}
    for key, default in schema.items():
        if key in given:
            value = given[key]
            if default not in (REQUIRED, OPTIONAL) and not _same_type(default, value):
                raise ConfigError(f"[{name}].{key} should be {type(default).__name__}, got {type(value).__name__}")
            out[key] = value
        elif default is REQUIRED:
            raise ConfigError(f"[{name}] is missing required key {key!r}")
        elif default is not OPTIONAL:
            out[key] = copy.deepcopy(default)
    return out


def _same_type(default, value):
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    return isinstance(value, type(default))


def resolve(doc: dict, seed_override=None) -> dict:
    """Validate a parsed document and fill every default."""
    unknown = sorted(set(doc) - set(SCHEMA) - set(ROOT_KEYS))
    if unknown:
        raise ConfigError(f"unknown section(s) or key(s): {', '.join(unknown)}")
    out = {"seed": doc.get("seed", ROOT_KEYS["seed"])}
    if seed_override is not None:
        out["seed"] = seed_override
    if isinstance(out["seed"], bool) or not isinstance(out["seed"], int) or out["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    for name, schema in SCHEMA.items():
        out[name] = _resolve_table(name, doc.get(name, {}), schema)
    out["scenario"]["runs"] = [_resolve_table(f"scenario.runs[{i}]", r, RUN_KEYS) for i, r in enumerate(out["scenario"]["runs"])]
    return out


def load(path, seed_override=None) -> dict:
    return loads(Path(path).read_bytes().decode("utf-8"), seed_override)


def loads(text: str, seed_override=None) -> dict:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return resolve(doc, seed_override)


def dumps(resolved: dict) -> str:
    return tomli_w.dumps(resolved)


def operator_spec(cfg: dict, shape=None) -> dict:
    spec = {k: v for k, v in cfg["operator"].items() if k != "sigma"}
    if shape is not None:
        spec["shape"] = list(shape)
    return spec
