"""Run configuration: a YAML file plus ``--set key=value`` overrides."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .envs import EnvConfig
from .errors import ConfigError
from .policy import PolicySpec

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "out": None,
    "envs": [{"kind": "sokoban"}, {"kind": "frozenlake"}, {"kind": "sudoku"}],
    "policy": {"variant": "oracle"},
    "dataset": {
        "target_count": 1280,
        "mode": "world_model",
        "template_mode": "observation_then_prediction",
        "with_coordinates": True,
        "strict_format": False,
        "max_episodes": None,
    },
    "eval": {
        "instances": 100,
        "n": 8,
        "k_values": [1, 8],
        "dp_oracle": True,
    },
    "worldmodel": {
        "instances": 10,
        "steps": 5000,
        "coverage": False,
        "table": None,
        "heldout": None,
        "num_instances": 100,
        "n_random": 64,
    },
    "ppl": {
        "provider": "uniform",
        "unit": "symbol",
        "kind": "sokoban",
        "vocab_size": None,
        "input": None,
        "generate": 20,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(cfg, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, list):
            try:
                idx = int(part)
            except ValueError:
                raise ConfigError(f"--set {dotted}: {part!r} is not a list index") from None
            while len(node) <= idx:
                node.append({})
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
        else:
            raise ConfigError(f"--set {dotted}: cannot descend into {type(node).__name__}")


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return key.strip(), value


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> dict:
    """Defaults, then the file, then overrides (last one wins)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        cfg = _merge(cfg, data)
    for item in overrides:
        key, value = parse_override(item)
        _set_path(cfg, key, value)
    return cfg


def env_configs(cfg: dict) -> list[EnvConfig]:
    envs = cfg.get("envs")
    if not envs:
        raise ConfigError("no environments configured")
    return [EnvConfig.from_dict(e) for e in envs]


def policy_spec(cfg: dict) -> PolicySpec:
    return PolicySpec.from_dict(cfg.get("policy") or {})


def section(cfg: dict, name: str) -> dict:
    """Section values with unknown keys rejected."""
    values = cfg.get(name) or {}
    unknown = set(values) - set(DEFAULTS[name])
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return {**DEFAULTS[name], **values}
