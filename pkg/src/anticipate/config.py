"""Run configuration: one JSON file with sections ``gen`` and ``train``.

``train`` holds the trainer scalars plus nested ``model``, ``loss`` and
``reward`` objects. Unknown keys and wrongly typed values are rejected.

Example::

    {"gen": {"n_pos": 50, "n_neg": 50},
     "train": {"epochs": 10, "model": {"window": 0}, "reward": {"decay": 50.0}}}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dataset import GenConfig
from .errors import ConfigError
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.gen.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if default is None:
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{path}: expected a number or null, got {value!r}")
        return value
    return value


def merge(obj, updates: dict, path: str = ""):
    """Return ``obj`` (a config dataclass) with ``updates`` applied recursively."""
    if not isinstance(updates, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in updates.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = merge(current, value, where)
        else:
            changes[key] = _coerce(value, current, where)
    return dataclasses.replace(obj, **changes)


def load_run_config(path=None, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return merge(cfg, raw)
