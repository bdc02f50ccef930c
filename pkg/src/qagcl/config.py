"""Flat ``key = value`` configuration files with named plan stanzas.

A file holds base keys at the top and optional ``[plan NAME]`` stanzas
whose keys override the base for that plan. Keys are the fields of
``TrainConfig`` plus the plan-level keys ``models``, ``ks`` and ``seeds``.
Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import hashlib
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .training import TrainConfig

PLAN_KEYS = {"models": str, "ks": str, "seeds": str}

_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_CASTERS = {"float": float, "int": int, "str": str, "bool": None}


def _to_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def coerce(key: str, value: Any) -> Any:
    """Convert a raw value to the type of config key ``key``."""
    if key in PLAN_KEYS:
        return str(value)
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key] if isinstance(_TYPES[key], str) else _TYPES[key].__name__
    if not isinstance(value, str):
        return bool(value) if kind == "bool" else _CASTERS[kind](value)
    try:
        if kind == "bool":
            return _to_bool(value)
        if kind == "int":
            return int(float(value)) if "e" in value.lower() else int(value)
        return _CASTERS[kind](value.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> tuple[dict, dict[str, dict]]:
    """Return ``(base, plans)`` with values coerced to their key types."""
    base: dict = {}
    plans: dict[str, dict] = {}
    current = base
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            head = line[1:-1].split()
            if len(head) != 2 or head[0] != "plan":
                raise ConfigError(f"{source}:{lineno}: expected '[plan NAME]', got {line!r}")
            current = plans.setdefault(head[1], {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            current[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return base, plans


def load_config_file(path: Optional[str]) -> tuple[dict, dict[str, dict]]:
    if path is None:
        return {}, {}
    with open(path) as fh:
        return parse_config_text(fh.read(), source=str(path))


def build_config(*layers: Mapping[str, Any]) -> TrainConfig:
    """Merge layers left to right (later wins) over the defaults."""
    merged: dict = {}
    for layer in layers:
        for k, v in layer.items():
            if v is None or k in PLAN_KEYS:
                continue
            merged[k] = coerce(k, v)
    return TrainConfig(**merged)


def config_items(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: TrainConfig | Mapping[str, Any]) -> str:
    """Short digest of the resolved config, independent of key order."""
    items = config_items(cfg) if isinstance(cfg, TrainConfig) else dict(cfg)
    text = "\n".join(f"{k}={items[k]!r}" for k in sorted(items))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def dump_config(cfg: TrainConfig) -> str:
    items = config_items(cfg)
    return "".join(f"{k} = {str(items[k]).lower() if isinstance(items[k], bool) else items[k]}\n"
                   for k in sorted(items))


def parse_int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(",", " ").split()]


def parse_str_list(text: str) -> list[str]:
    return [t for t in str(text).replace(",", " ").split()]
