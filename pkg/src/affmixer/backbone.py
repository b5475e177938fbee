"""Hierarchical feature extractor producing the three-level pyramid.

The toy backbone is five stride-2 conv stages (H -> H/2 -> ... -> H/32); the
outputs of stages 3, 4 and 5 are the pyramid taps at strides 8, 16 and 32.
A real pretrained network can be plugged in with ``kind="external-adapter"``.
"""

from __future__ import annotations

import importlib
import logging
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import Tensor, nn

from affmixer.config import BackboneConfig
from affmixer.errors import ConfigError, DimensionError, NonFiniteError

log = logging.getLogger(__name__)


class FeaturePyramid(NamedTuple):
    """Per-frame feature maps, each shaped ``B x T x C_l x H_l x W_l``."""

    level1: Tensor
    level2: Tensor
    level3: Tensor

    def as_dict(self) -> dict[int, Tensor]:
        return {1: self.level1, 2: self.level2, 3: self.level3}


@dataclass
class FreezeReport:
    frozen_params: int
    trainable_params: int
    frozen_stages: list[int]
    trainable_stages: list[int]

    @property
    def total_params(self) -> int:
        return self.frozen_params + self.trainable_params


def _stage(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.GELU())


class ToyBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        widths = [3, *cfg.stem_channels, *cfg.channels]
        self.stages = nn.ModuleList(_stage(a, b) for a, b in zip(widths[:-1], widths[1:]))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        taps = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i >= 2:
                taps.append(x)
        return tuple(taps)


def _load_adapter(cfg: BackboneConfig) -> nn.Module:
    mod_name, _, attr = (cfg.adapter or "").partition(":")
    try:
        factory = getattr(importlib.import_module(mod_name), attr)
    except (ImportError, AttributeError, ValueError) as exc:
        raise ConfigError(f"cannot import backbone adapter {cfg.adapter!r}: {exc}") from exc
    net = factory(cfg)
    if not isinstance(net, nn.Module):
        raise ConfigError("backbone adapter factory must return an nn.Module")
    return net


class Backbone(nn.Module):
    """Normalizes frames and maps ``B x T x 3 x H x W`` to a :class:`FeaturePyramid`."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.net = ToyBackbone(cfg) if cfg.kind == "toy" else _load_adapter(cfg)
        self.register_buffer("mean", torch.tensor(cfg.mean).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(cfg.std).view(1, 3, 1, 1), persistent=False)

    @property
    def stages(self) -> list[nn.Module]:
        stages = getattr(self.net, "stages", None)
        return list(stages) if stages is not None else list(self.net.children())

    def forward(self, frames: Tensor) -> FeaturePyramid:
        return self.extract_pyramid(frames)

    def extract_pyramid(self, frames: Tensor) -> FeaturePyramid:
        if frames.dim() != 5 or frames.shape[2] != 3:
            raise DimensionError(f"expected B x T x 3 x H x W frames, got {tuple(frames.shape)}")
        b, t, _, h, w = frames.shape
        if t < 1 or h % 32 or w % 32 or h == 0 or w == 0:
            raise DimensionError(f"T must be >= 1 and H, W divisible by 32; got T={t}, {h}x{w}")
        if not torch.isfinite(frames).all():
            raise NonFiniteError("input frames contain non-finite values")
        x = (frames.reshape(b * t, 3, h, w) - self.mean.to(frames.dtype)) / self.std.to(frames.dtype)
        taps = self.net(x)
        if len(taps) != 3:
            raise DimensionError(f"backbone must return 3 pyramid levels, got {len(taps)}")
        out = []
        for stride, tap in zip((8, 16, 32), taps):
            if tap.shape[-2:] != (h // stride, w // stride):
                raise DimensionError(
                    f"pyramid tap at stride {stride} has grid {tuple(tap.shape[-2:])}, "
                    f"expected {(h // stride, w // stride)}"
                )
            out.append(tap.reshape(b, t, *tap.shape[1:]))
        return FeaturePyramid(*out)


def apply_freeze_policy(backbone: Backbone, trainable_suffix: int | None = None) -> FreezeReport:
    """Keep only the trailing ``trainable_suffix`` stages trainable."""
    stages = backbone.stages
    k = backbone.cfg.trainable_suffix if trainable_suffix is None else trainable_suffix
    if not 0 <= k <= len(stages):
        raise ConfigError(f"trainable_suffix must lie in [0, {len(stages)}], got {k}")
    cut = len(stages) - k
    frozen = trainable = 0
    for i, stage in enumerate(stages):
        for p in stage.parameters():
            p.requires_grad_(i >= cut)
            if i >= cut:
                trainable += p.numel()
            else:
                frozen += p.numel()
    # parameters outside the staged stack follow the first stage
    staged = {id(p) for s in stages for p in s.parameters()}
    for p in backbone.parameters():
        if id(p) not in staged:
            p.requires_grad_(cut == 0)
            if cut == 0:
                trainable += p.numel()
            else:
                frozen += p.numel()
    report = FreezeReport(frozen, trainable, list(range(cut)), list(range(cut, len(stages))))
    log.debug("freeze policy: %s", report)
    return report


def extract_pyramid(frames: Tensor, backbone: Backbone) -> FeaturePyramid:
    return backbone.extract_pyramid(frames)
