"""Run configuration: defaults < JSON file < command-line overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .scene import SceneConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        try:
            self.scene.validate()
            self.model.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.model.num_queries < self.scene.k_range[1]:
            raise ConfigError(f"num_queries {self.model.num_queries} < max instances "
                              f"{self.scene.k_range[1]}")
        if self.model.num_classes != self.scene.num_classes:
            raise ConfigError("model.num_classes must equal scene.num_classes")


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve(path=None, overrides: dict | None = None) -> RunConfig:
    """Materialise every field. ``overrides`` uses the nested dict layout."""
    data = RunConfig().to_dict()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            data = _merge(data, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from None
    if overrides:
        data = _merge(data, overrides)
    cfg = from_dict(data)
    cfg.validate()
    return cfg


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


__all__ = ["RunConfig", "ConfigError", "resolve", "from_dict", "save", "LossWeights"]
