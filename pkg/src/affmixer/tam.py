"""Temporal aggregation module: 3D MLP-Mixer stacks over (time, space, channel).

Each pyramid level is tokenized into a ``B x T x S x D`` grid (S = h*w spatial
tokens in row-major order), run through ``depth`` mixer blocks, mean-pooled over
S, and the per-level ``B x T x D`` embeddings are concatenated.  A block applies,
in ``mixing_order``, a pre-normalized residual two-layer MLP along T, along S
and along D.  Padded frames are zeroed before every temporal MLP so they cannot
reach valid positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from affmixer.config import MixerConfig
from affmixer.errors import DimensionError, NonFiniteError


@dataclass
class AggregatedFeatures:
    per_frame: Tensor  # B x T x (D * n_levels)
    per_sequence: Tensor  # B x (D * n_levels)


class AxisMLP(nn.Module):
    def __init__(self, n: int, expansion: float):
        super().__init__()
        hidden = max(1, int(round(n * expansion)))
        self.fc1 = nn.Linear(n, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, n)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


class MixerBlock(nn.Module):
    def __init__(self, n_frames: int, n_tokens: int, dim: int, cfg: MixerConfig):
        super().__init__()
        self.order = tuple(cfg.mixing_order)
        sizes = {
            "temporal": (n_frames, cfg.temporal_expansion),
            "spatial": (n_tokens, cfg.token_expansion),
            "channel": (dim, cfg.channel_expansion),
        }
        self.norms = nn.ModuleDict({k: nn.LayerNorm(dim) for k in self.order})
        self.mlps = nn.ModuleDict({k: AxisMLP(*sizes[k]) for k in self.order})
        self.shape = (n_frames, n_tokens, dim)

    def forward(self, x: Tensor, frame_mask: Tensor | None = None) -> Tensor:
        if x.shape[1:] != self.shape:
            raise DimensionError(f"mixer block built for T x S x D = {self.shape}, got {tuple(x.shape[1:])}")
        for kind in self.order:
            y = self.norms[kind](x)
            mlp = self.mlps[kind]
            if kind == "temporal":
                if frame_mask is not None:
                    y = y * frame_mask[:, :, None, None].to(y.dtype)
                y = mlp(y.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
            elif kind == "spatial":
                y = mlp(y.transpose(-1, -2)).transpose(-1, -2)
            else:
                y = mlp(y)
            x = x + y
        if not torch.isfinite(x).all():
            raise NonFiniteError("non-finite activation in mixer block")
        return x

    def zero_output_layers(self) -> None:
        with torch.no_grad():
            for mlp in self.mlps.values():
                mlp.fc2.weight.zero_()
                mlp.fc2.bias.zero_()


class MixerLevel(nn.Module):
    """tokenize -> blocks -> spatial mean pool, for one pyramid level."""

    def __init__(self, in_channels: int, grid: tuple[int, int], n_frames: int, dim: int, depth: int, cfg: MixerConfig):
        super().__init__()
        self.in_channels = in_channels
        self.grid = tuple(grid)
        self.proj = nn.Linear(in_channels, dim)
        n_tokens = grid[0] * grid[1]
        self.blocks = nn.ModuleList(MixerBlock(n_frames, n_tokens, dim, cfg) for _ in range(depth))

    def tokenize(self, feats: Tensor) -> Tensor:
        """``B x T x C x h x w`` -> ``B x T x (h*w) x D`` (row-major spatial flattening)."""
        if feats.dim() != 5 or feats.shape[2] != self.in_channels or tuple(feats.shape[-2:]) != self.grid:
            raise DimensionError(
                f"level expects B x T x {self.in_channels} x {self.grid[0]} x {self.grid[1]}, got {tuple(feats.shape)}"
            )
        if not torch.isfinite(feats).all():
            raise NonFiniteError("non-finite level features")
        return self.proj(feats.flatten(-2).transpose(-1, -2))

    def forward(self, feats: Tensor, frame_mask: Tensor | None = None) -> Tensor:
        x = self.tokenize(feats)
        for block in self.blocks:
            x = block(x, frame_mask)
        return x.mean(dim=2)


class TemporalAggregation(nn.Module):
    """Runs one :class:`MixerLevel` per configured level and fuses them by concatenation.

    ``level_shapes`` maps level id -> (channels, h, w) of that level's input.
    """

    def __init__(self, cfg: MixerConfig, level_shapes: dict[int, tuple[int, int, int]], n_frames: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.n_frames = n_frames
        self.levels = nn.ModuleDict()
        for lv in cfg.levels:
            if lv not in level_shapes:
                raise DimensionError(f"mixer level {lv} has no input shape")
            c, h, w = level_shapes[lv]
            self.levels[str(lv)] = MixerLevel(c, (h, w), n_frames, cfg.dim(lv), cfg.n_blocks(lv), cfg)

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def forward(self, pyramid: dict[int, Tensor], frame_mask: Tensor | None = None) -> AggregatedFeatures:
        missing = [lv for lv in self.cfg.levels if lv not in pyramid]
        if missing:
            raise DimensionError(f"pyramid is missing level(s) {missing}")
        per_frame = torch.cat([self.levels[str(lv)](pyramid[lv], frame_mask) for lv in self.cfg.levels], dim=-1)
        if frame_mask is None:
            per_sequence = per_frame.mean(dim=1)
        else:
            m = frame_mask.to(per_frame.dtype).unsqueeze(-1)
            per_sequence = (per_frame * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)
        return AggregatedFeatures(per_frame, per_sequence)

    def zero_mixing_outputs(self) -> None:
        for level in self.levels.values():
            for block in level.blocks:
                block.zero_output_layers()


def tam_flops(cfg: MixerConfig, level_shapes: dict[int, tuple[int, int, int]], n_frames: int) -> dict[str, int]:
    """Matmul FLOPs (2 per multiply-add) of one clip through the mixer stacks.

    Returns per-component totals: ``tokenize``, ``temporal``, ``spatial``,
    ``channel``, and ``total``.  Norms, activations, biases and pooling are
    excluded.
    """
    t = n_frames
    out = {"tokenize": 0, "temporal": 0, "spatial": 0, "channel": 0}
    hidden = lambda n, e: max(1, int(round(n * e)))  # noqa: E731 - matches AxisMLP
    for lv in cfg.levels:
        c, h, w = level_shapes[lv]
        s, d, depth = h * w, cfg.dim(lv), cfg.n_blocks(lv)
        out["tokenize"] += 2 * t * s * c * d
        per_block = {
            "temporal": 4 * s * d * t * hidden(t, cfg.temporal_expansion),
            "spatial": 4 * t * d * s * hidden(s, cfg.token_expansion),
            "channel": 4 * t * s * d * hidden(d, cfg.channel_expansion),
        }
        for kind in cfg.mixing_order:
            out[kind] += depth * per_block[kind]
    out["total"] = sum(out.values())
    return out
