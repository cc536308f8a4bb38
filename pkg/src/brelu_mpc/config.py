"""JSON run configuration with named presets.

Schema (every section optional)::

    {
      "preset": "classification-16bit",
      "seed": "<64 hex chars>",
      "codec": {"frac_bits": 16},
      "truncation": {"ignore_msb": 43, "ignore_lsb": 5},
      "planner": {"samples": 64, "budget_frac": 0.1, "bucket": 1, "mode": "optimal", "sample_seed": 0},
      "bits": {"target_error": 0.0005, "samples": 100000},
      "transport": {"kind": "inprocess", "base_port": 47100, "timeout": 60.0}
    }

Values from the file override the preset, which overrides the defaults.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration file or flag combination."""


DEFAULTS = {
    "preset": None,
    "seed": "00" * 32,
    "codec": {"frac_bits": 16},
    "truncation": {"ignore_msb": 0, "ignore_lsb": 0},
    "planner": {"samples": 64, "budget_frac": 0.1, "bucket": 1, "mode": "optimal", "sample_seed": 0},
    "bits": {"target_error": 5e-4, "samples": 100_000},
    "transport": {"kind": "inprocess", "base_port": 47100, "timeout": 60.0},
}

PRESETS = {
    "classification-16bit": {"codec": {"frac_bits": 16}, "truncation": {"ignore_msb": 43, "ignore_lsb": 5}},
    "segmentation-20bit": {"codec": {"frac_bits": 12}, "truncation": {"ignore_msb": 44, "ignore_lsb": 0}},
    "exact": {"codec": {"frac_bits": 16}, "truncation": {"ignore_msb": 0, "ignore_lsb": 0}},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, preset: str | None = None) -> dict:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    name = preset or data.get("preset")
    cfg = copy.deepcopy(DEFAULTS)
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        cfg = _merge(cfg, PRESETS[name])
    cfg = _merge(cfg, data)
    cfg["preset"] = name
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    f = cfg["codec"]["frac_bits"]
    if not isinstance(f, int) or not 0 <= f <= 30:
        raise ConfigError(f"codec.frac_bits must be an integer in [0, 30], got {f!r}")
    km, kl = cfg["truncation"]["ignore_msb"], cfg["truncation"]["ignore_lsb"]
    if not all(isinstance(v, int) and v >= 0 for v in (km, kl)) or 64 - km - kl < 2:
        raise ConfigError(f"truncation must leave at least 2 compared bits (got msb={km}, lsb={kl})")
    if cfg["transport"]["kind"] not in ("inprocess", "tcp"):
        raise ConfigError(f"transport.kind must be 'inprocess' or 'tcp', got {cfg['transport']['kind']!r}")
    if cfg["planner"]["mode"] not in ("optimal", "shuffled", "constant"):
        raise ConfigError(f"planner.mode {cfg['planner']['mode']!r} is not one of optimal, shuffled, constant")
    seed = cfg["seed"]
    try:
        if len(bytes.fromhex(seed)) > 32:
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError("seed must be a hex string of at most 32 bytes") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def run_manifest(cfg: dict, **paths) -> dict:
    """Record of what a run used; identical inputs give identical manifests."""
    return {
        "version": 1,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "codec": cfg["codec"],
        "truncation": cfg["truncation"],
        "preset": cfg["preset"],
        "transport": cfg["transport"]["kind"],
        **{k: (str(v) if v is not None else None) for k, v in sorted(paths.items())},
    }
