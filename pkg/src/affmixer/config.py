"""Run configuration records and their YAML round-trip.

Every hyperparameter that influences a run lives in :class:`RunConfig`, so a
run is reproducible from (config file, dataset, seed).  Overrides use dotted
keys, e.g. ``mixer.depth=[1,1,1]`` or ``optim.lr=3e-4``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

from affmixer.errors import ConfigError

TASKS = ("au", "va", "ah", "emi")
MIXING_KINDS = ("temporal", "spatial", "channel")
LEVEL_STRIDES = {1: 8, 2: 16, 3: 32}


@dataclass
class BackboneConfig:
    kind: str = "toy"  # toy | external-adapter
    channels: tuple[int, int, int] = (32, 64, 96)
    stem_channels: tuple[int, int] = (16, 24)
    trainable_suffix: int = 1
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    # "package.module:factory"; the factory receives this config and returns an nn.Module
    adapter: str | None = None
    num_stages: int = 5

    def validate(self) -> None:
        if self.kind not in ("toy", "external-adapter"):
            raise ConfigError(f"backbone.kind must be 'toy' or 'external-adapter', got {self.kind!r}")
        if self.kind == "external-adapter" and not self.adapter:
            raise ConfigError("backbone.adapter is required for kind 'external-adapter'")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"backbone.channels must be three positive ints, got {self.channels}")
        if self.kind == "toy" and self.num_stages != 5:
            raise ConfigError("the toy backbone has exactly 5 stages")
        if not 0 <= self.trainable_suffix <= self.num_stages:
            raise ConfigError(
                f"backbone.trainable_suffix must lie in [0, {self.num_stages}], got {self.trainable_suffix}"
            )
        if len(self.mean) != 3 or len(self.std) != 3 or min(self.std) <= 0:
            raise ConfigError("backbone.mean/std need three entries with positive std")


@dataclass
class MixerConfig:
    levels: tuple[int, ...] = (1, 2, 3)
    # per pyramid level 1, 2, 3 (grids 28/14/7 at 224 input)
    embed_dim: tuple[int, int, int] = (64, 64, 64)
    depth: tuple[int, int, int] = (2, 2, 2)
    temporal_expansion: float = 2.0
    token_expansion: float = 2.0
    channel_expansion: float = 2.0
    mixing_order: tuple[str, ...] = MIXING_KINDS
    fusion: str = "concat"

    def validate(self) -> None:
        if not self.levels:
            raise ConfigError("mixer.levels must be non-empty")
        if len(set(self.levels)) != len(self.levels) or not set(self.levels) <= {1, 2, 3}:
            raise ConfigError(f"mixer.levels must be distinct values from {{1,2,3}}, got {self.levels}")
        if len(self.embed_dim) != 3 or len(self.depth) != 3:
            raise ConfigError("mixer.embed_dim and mixer.depth need one entry per pyramid level (3)")
        for lv in self.levels:
            if self.depth[lv - 1] < 1:
                raise ConfigError(f"mixer.depth for level {lv} must be >= 1, got {self.depth[lv - 1]}")
            if self.embed_dim[lv - 1] < 1:
                raise ConfigError(f"mixer.embed_dim for level {lv} must be >= 1")
        for name in ("temporal_expansion", "token_expansion", "channel_expansion"):
            if getattr(self, name) < 1:
                raise ConfigError(f"mixer.{name} must be >= 1, got {getattr(self, name)}")
        if len(set(self.mixing_order)) != len(self.mixing_order) or not set(self.mixing_order) <= set(MIXING_KINDS):
            raise ConfigError(f"mixer.mixing_order must be distinct entries of {MIXING_KINDS}")
        if self.fusion != "concat":
            raise ConfigError("only concat fusion is implemented")

    def dim(self, level: int) -> int:
        return self.embed_dim[level - 1]

    def n_blocks(self, level: int) -> int:
        return self.depth[level - 1]

    @property
    def out_dim(self) -> int:
        return sum(self.dim(lv) for lv in self.levels)


@dataclass
class ClipSpec:
    length: int = 16
    stride: int = 8
    policy: str = "random-start"  # sequential | random-start

    def validate(self) -> None:
        if self.length < 1 or self.stride < 1:
            raise ConfigError(f"clip length and stride must be >= 1, got {self.length}/{self.stride}")
        if self.policy not in ("sequential", "random-start"):
            raise ConfigError(f"clip.policy must be 'sequential' or 'random-start', got {self.policy!r}")


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = "none"  # none | cosine

    def validate(self) -> None:
        if self.kind not in ("adam", "adamw", "sgd"):
            raise ConfigError(f"optim.kind {self.kind!r} not supported")
        if self.lr < 0:
            raise ConfigError("optim.lr must be >= 0")
        if self.schedule not in ("none", "cosine"):
            raise ConfigError(f"optim.schedule {self.schedule!r} not supported")


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mixer: MixerConfig = field(default_factory=MixerConfig)
    tasks: tuple[str, ...] = ("au",)
    loss_weights: dict[str, float] = field(default_factory=lambda: {t: 1.0 for t in TASKS})
    optim: OptimConfig = field(default_factory=OptimConfig)
    clip: ClipSpec = field(default_factory=ClipSpec)
    batch_size: int = 4
    image_size: int = 64
    input_kind: str = "frames"  # frames | features
    feature_dim: int = 512
    steps: int = 500
    val_every: int = 100
    log_every: int = 10
    seed: int = 0
    precision: str = "float32"
    manifest: str | None = None
    val_split: str = "val"
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        self.backbone.validate()
        self.mixer.validate()
        self.optim.validate()
        self.clip.validate()
        if not self.tasks or not set(self.tasks) <= set(TASKS):
            raise ConfigError(f"tasks must be a non-empty subset of {TASKS}, got {self.tasks}")
        unknown = set(self.loss_weights) - set(TASKS)
        if unknown:
            raise ConfigError(f"loss_weights has unknown tasks {sorted(unknown)}")
        if any(w < 0 for w in self.loss_weights.values()):
            raise ConfigError("loss weights must be non-negative")
        if self.input_kind not in ("frames", "features"):
            raise ConfigError(f"input_kind must be 'frames' or 'features', got {self.input_kind!r}")
        if self.input_kind == "frames" and (self.image_size < 32 or self.image_size % 32):
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.input_kind == "features" and len(self.mixer.levels) != 1:
            raise ConfigError("the feature-sequence path drives exactly one mixer level")
        if self.batch_size < 1 or self.steps < 0 or self.val_every < 1:
            raise ConfigError("batch_size and val_every must be >= 1, steps >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        return self

    def weight(self, task: str) -> float:
        return float(self.loss_weights.get(task, 1.0))

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "RunConfig":
        return _build(cls, data or {}, "")

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        data = self.to_dict()
        for item in overrides:
            apply_override(data, item)
        return RunConfig.from_dict(data)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict[str, Any], prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        elif isinstance(default, tuple) and isinstance(value, (list, tuple)):
            kwargs[name] = tuple(value)
        elif isinstance(default, tuple):
            raise ConfigError(f"{prefix}{name}: expected a list, got {value!r}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_override(data: dict[str, Any], item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: {exc}") from exc
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a config section")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"override {key!r}: unknown key")
    node[parts[-1]] = value


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = RunConfig.from_dict(data)
    return cfg.with_overrides(overrides).validate()


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
