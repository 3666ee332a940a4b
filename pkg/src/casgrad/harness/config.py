"""JSON experiment configuration: loading, defaults and validation."""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ConfigError

SENSITIVITY_METHODS = ("casg_exact", "casg_rbf", "fd_exact", "fd_rbf", "cd", "global_grad")
DFO_METHODS = ("casg_exact", "fd_exact", "cd", "casg_rbf", "fd_rbf", "global_grad")

SENSITIVITY_DEFAULTS = {
    "problems": [{"name": "ackley", "dim": 8, "sigma": 1e-5}],
    "methods": list(SENSITIVITY_METHODS),
    "steps": [0.1, 0.05, 0.01],
    "n_points": 100,
    "n_model_points": 2000,
    "n_points_sweep": [],
    "smoothing": 0.0,
    "filter": {"mode": "all"},
    "seed": 0,
    "toy": None,
}

DFO_DEFAULTS = {
    "problems": "builtin",
    "methods": ["casg_exact", "fd_exact", "cd"],
    "steps": [0.1, 0.01, 0.001],
    "sigmas": [1e-5],
    "runs": 10,
    "budget": 200.0,
    "memory": 10,
    "armijo": 1e-4,
    "noise_allowance": 2.0,
    "include_init": True,
    "admit_line_search": False,
    "init_per_dim": 100,
    "init_side": 2.0,
    "smoothing": 0.0,
    "filter": {"mode": "nearest_k"},
    "taus": [1e-1, 1e-3, 1e-5],
    "seed": 0,
}


def load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _merge(defaults: dict, data: dict, section: str) -> dict:
    unknown = set(data) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {section} config keys {sorted(unknown)}")
    out = json.loads(json.dumps(defaults))
    out.update(data)
    return out


def _positive_list(cfg, key):
    vals = cfg[key]
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"{key} must be a non-empty list")
    try:
        vals = [float(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must hold numbers") from exc
    if any(not v > 0 for v in vals):
        raise ConfigError(f"{key} entries must be positive")
    cfg[key] = vals


def _check_methods(cfg, allowed):
    methods = cfg["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a non-empty list")
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {list(allowed)}")


def _check_problems(cfg, allow_builtin):
    probs = cfg["problems"]
    if allow_builtin and probs == "builtin":
        return
    if not isinstance(probs, list) or not probs:
        raise ConfigError("problem list is empty")
    if any(not isinstance(p, dict) or "name" not in p for p in probs):
        raise ConfigError("each problem needs a name")


def _check_int(cfg, key, lo):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{key} must be an integer >= {lo}")


def sensitivity_config(data: dict) -> dict:
    cfg = _merge(SENSITIVITY_DEFAULTS, data, "sensitivity")
    _check_problems(cfg, allow_builtin=False)
    _check_methods(cfg, SENSITIVITY_METHODS)
    _positive_list(cfg, "steps")
    _check_int(cfg, "n_points", 1)
    _check_int(cfg, "n_model_points", 2)
    _check_int(cfg, "seed", 0)
    if not isinstance(cfg["n_points_sweep"], list):
        raise ConfigError("n_points_sweep must be a list")
    if float(cfg["smoothing"]) < 0:
        raise ConfigError("smoothing must be nonnegative")
    toy = cfg["toy"]
    if toy is not None:
        if not isinstance(toy, dict):
            raise ConfigError("toy must be an object")
        for key in ("ks", "sigma", "h"):
            if key not in toy:
                raise ConfigError(f"toy config needs {key!r}")
    return cfg


def dfo_config(data: dict) -> dict:
    cfg = _merge(DFO_DEFAULTS, data, "dfo")
    _check_problems(cfg, allow_builtin=True)
    _check_methods(cfg, DFO_METHODS)
    _positive_list(cfg, "steps")
    if not isinstance(cfg["sigmas"], list) or not cfg["sigmas"] or any(float(s) < 0 for s in cfg["sigmas"]):
        raise ConfigError("sigmas must be a non-empty list of nonnegative numbers")
    cfg["sigmas"] = [float(s) for s in cfg["sigmas"]]
    _check_int(cfg, "runs", 1)
    _check_int(cfg, "memory", 1)
    _check_int(cfg, "init_per_dim", 0)
    _check_int(cfg, "seed", 0)
    if not float(cfg["budget"]) > 0:
        raise ConfigError("budget must be positive")
    taus = cfg["taus"]
    if not isinstance(taus, list) or any(not 0 < float(t) < 1 for t in taus):
        raise ConfigError("taus must lie in (0, 1)")
    return cfg
