"""Full network: backbone pyramid (or feature adapter) -> TAM -> task heads."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from affmixer.backbone import Backbone, FreezeReport, apply_freeze_policy
from affmixer.config import LEVEL_STRIDES, RunConfig
from affmixer.data.clips import ClipBatch, feature_tokens
from affmixer.errors import DimensionError
from affmixer.heads import TaskHeads, TaskOutput
from affmixer.tam import AggregatedFeatures, TemporalAggregation


def level_shapes(cfg: RunConfig) -> dict[int, tuple[int, int, int]]:
    if cfg.input_kind == "features":
        return {cfg.mixer.levels[0]: (cfg.feature_dim, 1, 1)}
    return {
        lv: (cfg.backbone.channels[lv - 1], cfg.image_size // LEVEL_STRIDES[lv], cfg.image_size // LEVEL_STRIDES[lv])
        for lv in (1, 2, 3)
    }


class AffectModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone) if cfg.input_kind == "frames" else None
        self.tam = TemporalAggregation(cfg.mixer, level_shapes(cfg), cfg.clip.length)
        self.heads = TaskHeads(self.tam.out_dim, cfg.tasks)

    def pyramid(self, inputs: Tensor) -> dict[int, Tensor]:
        if self.backbone is None:
            return {self.cfg.mixer.levels[0]: feature_tokens(inputs)}
        return self.backbone(inputs).as_dict()

    def aggregate(self, inputs: Tensor, frame_mask: Tensor | None = None) -> AggregatedFeatures:
        if inputs.shape[1] != self.cfg.clip.length:
            raise DimensionError(f"model built for clips of {self.cfg.clip.length} frames, got {inputs.shape[1]}")
        return self.tam(self.pyramid(inputs), frame_mask)

    def forward(self, inputs: Tensor, frame_mask: Tensor | None = None) -> TaskOutput:
        return self.heads(self.aggregate(inputs, frame_mask))

    def forward_batch(self, batch: ClipBatch) -> TaskOutput:
        inputs = batch.frames if self.backbone is not None else batch.features
        if inputs is None:
            raise DimensionError(f"batch carries no {self.cfg.input_kind} input")
        dtype = next(self.parameters()).dtype
        return self(inputs.to(dtype), batch.frame_mask)

    def freeze(self) -> FreezeReport | None:
        if self.backbone is None:
            return None
        return apply_freeze_policy(self.backbone, self.cfg.backbone.trainable_suffix)


def build_model(cfg: RunConfig, seed: int | None = None) -> AffectModel:
    """Seeded construction; the freeze policy is applied before returning."""
    cfg.validate()
    torch.manual_seed(cfg.seed if seed is None else seed)
    model = AffectModel(cfg)
    if cfg.precision == "float64":
        model = model.double()
    model.freeze()
    return model


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
