"""Pipeline configuration: one YAML file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import SynthConfig
from .extraction import ExtractionConfig
from .memory import SOURCE_TAGS
from .training import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class MemoryConfig:
    source_tag: str = "news-aligned"
    fallback: bool = False

    def __post_init__(self):
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"source_tag must be one of {SOURCE_TAGS}")


@dataclass
class AlignConfig:
    # off: the base model stands in for the aligned one (no coarse alignment)
    enabled: bool = True


@dataclass
class EvalConfig:
    gate: float = 0.2
    nms_tiou: float | None = 0.5
    tiou_thresholds: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    min_window: int = 9
    max_window: int = 16
    stride: int = 1
    attention_clips: int = 20


# stage seeds are offsets from the top-level seed
SEED_OFFSETS = {"train_base": 1, "train_joint": 2, "train_full": 3}


@dataclass
class PipelineConfig:
    dataset_dir: str = "data"
    output_dir: str = "out"
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train_base: TrainConfig = field(default_factory=lambda: TrainConfig(stage="base"))
    train_joint: TrainConfig = field(default_factory=lambda: TrainConfig(stage="joint"))
    train_full: TrainConfig = field(default_factory=lambda: TrainConfig(stage="full"))
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def resolve_seeds(self) -> "PipelineConfig":
        self.synth.seed = self.seed
        for name, off in SEED_OFFSETS.items():
            getattr(self, name).seed = self.seed + off
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if _is_dataclass_type(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return list(value)
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if tp is bool and isinstance(value, bool):
        return value
    if tp is str and isinstance(value, str):
        return value
    raise ConfigError(f"{where}: expected {getattr(tp, '__name__', tp)}, got {value!r}")


def build(cls, data: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    base = cls()
    merged = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
    merged.update(kwargs)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def apply_override(data: dict, assignment) -> None:
    """Apply ``"a.b=value"`` (value parsed as YAML) or an already typed ``(key, value)`` pair."""
    if isinstance(assignment, tuple):
        key, value = assignment
    elif "=" in assignment:
        key, raw = assignment.split("=", 1)
        value = yaml.safe_load(raw)
    else:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path: str | None = None, overrides=()) -> PipelineConfig:
    data: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for ov in overrides:
        apply_override(data, ov)
    return build(PipelineConfig, data).resolve_seeds()


def dump_config(cfg: PipelineConfig) -> str:
    def plain(x):
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        return x
    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
