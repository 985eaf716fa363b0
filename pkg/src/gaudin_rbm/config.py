"""Run configuration: a YAML file with fixed sections, validated against a schema.

Every key of the schema has a command-line twin ``--section.key`` that
overrides the file value; see :func:`add_override_arguments`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

REQUIRED = object()

# section -> key -> (type, default); REQUIRED marks keys the file must provide
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "model": {
        "N": (int, REQUIRED),
        "N0": (float, REQUIRED),
        "A": (float, REQUIRED),
        "B": (float, REQUIRED),
        "couplings": (list, None),
    },
    "rbm": {
        "M": (int, None),
        "init_spread": (float, 0.25),
    },
    "sampler": {
        "samples": (int, 5000),
        "burn_in": (int, None),
        "thin": (int, 1),
        "n_chains": (int, 1),
        "swap_prob": (float, 0.5),
        "pair_prob": (float, 0.25),
    },
    "optimizer": {
        "learning_rate": (float, 0.02),
        "diag_shift": (float, 0.01),
        "iterations": (int, 8000),
        "runs": (int, 50),
        "postselect_samples": (int, None),
        "omega_max": (float, 0.15),
        "beta": (float, None),
        "workers": (int, 1),
    },
    "dynamics": {
        "gamma": (float, 0.003),
        "response_gamma": (float, 0.0),
        "n_samples": (int, 5_000_000),
        "stderr_bound": (float, 1e-2),
        "levels": (int, None),
        "omega_points": (int, 2048),
        "B1": (float, 5.0),
        "B2": (float, 5.0),
        "t_bar": (float, 200.0),
        "tau1": (float, 100.0),
        "tau2": (float, 50.0),
        "carrier": (float, None),
        "carrier_level": (int, 3),
        "t_max": (float, 400.0),
        "dt": (float, 5e-4),
        "output_stride": (int, 1000),
        "quadrature": (str, "left"),
        "exact_compare": (bool, True),
    },
    "bench": {
        "n_min": (int, 1),
        "n_max": (int, 11),
        "samples": (int, 1000),
        "iterations": (int, 1000),
        "reps": (int, 1),
    },
    "output": {
        "dir": (str, REQUIRED),
    },
}
TOP_LEVEL = {"seed": (int, REQUIRED)}
REQUIRED_SECTIONS = ("model", "optimizer", "output")


def _coerce(value, typ, where):
    if value is None:
        return None
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if typ is list:
        if isinstance(value, str):
            value = yaml.safe_load(value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [float(x) for x in value]
    if typ is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected an integer, got {value!r}") from None
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {value!r}") from None


def resolve(raw: dict, overrides: dict | None = None) -> dict:
    """Validate a raw mapping, fill defaults and apply ``section.key`` overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    raw = copy.deepcopy(raw)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            sec, key = dotted.split(".", 1)
            raw.setdefault(sec, {})
            if not isinstance(raw[sec], dict):
                raise ConfigError(f"section {sec!r} must be a mapping")
            raw[sec][key] = value
        else:
            raw[dotted] = value
    unknown = set(raw) - set(SCHEMA) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    missing_sections = [s for s in REQUIRED_SECTIONS if s not in raw]
    if missing_sections:
        raise ConfigError(f"missing config section(s): {missing_sections}")
    out: dict[str, Any] = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        extra = set(given) - set(keys)
        if extra:
            raise ConfigError(f"unknown keys in section {sec!r}: {sorted(extra)}")
        res = {}
        for key, (typ, default) in keys.items():
            if key in given:
                res[key] = _coerce(given[key], typ, f"{sec}.{key}")
            elif default is REQUIRED:
                if sec == "model" and key in ("N", "N0", "A") and given.get("couplings") is not None:
                    res[key] = None
                    continue
                raise ConfigError(f"missing required config key: {sec}.{key}")
            else:
                res[key] = default
        out[sec] = res
    for key, (typ, default) in TOP_LEVEL.items():
        if key in raw:
            out[key] = _coerce(raw[key], typ, key)
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key: {key}")
        else:
            out[key] = default
    _check_values(out)
    return out


def _check_values(cfg: dict) -> None:
    m = cfg["model"]
    if m["couplings"] is not None:
        if m["N"] is not None and m["N"] != len(m["couplings"]):
            raise ConfigError(f"model.N={m['N']} disagrees with {len(m['couplings'])} couplings")
        m["N"] = len(m["couplings"])
    positive = [("model", "N"), ("sampler", "samples"), ("sampler", "thin"), ("sampler", "n_chains"),
                ("optimizer", "iterations"), ("optimizer", "runs"), ("optimizer", "workers"),
                ("optimizer", "learning_rate"), ("optimizer", "omega_max"),
                ("dynamics", "n_samples"), ("dynamics", "tau1"), ("dynamics", "tau2"),
                ("dynamics", "t_max"), ("dynamics", "dt"), ("dynamics", "output_stride"),
                ("dynamics", "omega_points"), ("bench", "reps"), ("bench", "samples"),
                ("bench", "iterations"), ("bench", "n_min")]
    for sec, key in positive:
        v = cfg[sec][key]
        if v is not None and not v > 0:
            raise ConfigError(f"{sec}.{key} must be positive, got {v!r}")
    smp = cfg["sampler"]
    if not (smp["swap_prob"] >= 0 and smp["pair_prob"] >= 0 and smp["swap_prob"] + smp["pair_prob"] < 1):
        raise ConfigError("sampler.swap_prob and sampler.pair_prob must be >= 0 with sum < 1")
    if cfg["dynamics"]["quadrature"] not in ("left", "trapezoid"):
        raise ConfigError("dynamics.quadrature must be 'left' or 'trapezoid'")
    if cfg["bench"]["n_max"] < cfg["bench"]["n_min"]:
        raise ConfigError("bench.n_max must be >= bench.n_min")


def load(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return resolve(raw or {}, overrides)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict, sections=None) -> str:
    """sha1 of the canonical JSON of the chosen sections (all by default)."""
    part = cfg if sections is None else {k: cfg[k] for k in sections}
    return hashlib.sha1(canonical_json(part).encode()).hexdigest()


def add_override_arguments(parser) -> None:
    """One ``--section.key`` option per schema entry (plus ``--seed``)."""
    group = parser.add_argument_group("config overrides")
    for sec, keys in SCHEMA.items():
        for key, (typ, _) in keys.items():
            group.add_argument(f"--{sec}.{key}", dest=f"{sec}.{key}", default=None,
                               type=str if typ in (list, bool) else typ, metavar=typ.__name__.upper())
    group.add_argument("--seed", dest="seed", type=int, default=None)


def overrides_from_args(args) -> dict:
    keys = [f"{s}.{k}" for s, ks in SCHEMA.items() for k in ks] + list(TOP_LEVEL)
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
