"""Central finite-difference check of every trainable parameter group."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import torch

from affmixer.config import BackboneConfig, ClipSpec, MixerConfig, RunConfig
from affmixer.data.clips import ClipBatch
from affmixer.heads import task_losses, total_loss
from affmixer.model import AffectModel, build_model

_GROUP_PATTERNS = [
    (re.compile(r"backbone\.net\.stages\.(\d+)\."), "backbone.stage{0}"),
    (re.compile(r"tam\.levels\.(\d+)\.proj\."), "tam.level{0}.tokenize"),
    (re.compile(r"tam\.levels\.(\d+)\.blocks\.\d+\.(?:norms|mlps)\.(\w+)\."), "tam.level{0}.{1}"),
    (re.compile(r"heads\.heads\.(\w+)\."), "heads.{0}"),
]


def group_of(name: str) -> str:
    for pat, fmt in _GROUP_PATTERNS:
        m = pat.match(name)
        if m:
            return fmt.format(*m.groups())
    return name.rsplit(".", 1)[0]


def gradcheck_config() -> RunConfig:
    """T=2, 32x32 frames (grids 4x4 / 2x2 / 1x1), D=4, one block per level, float64, every task."""
    return RunConfig(
        backbone=BackboneConfig(channels=(4, 4, 4), stem_channels=(3, 4), trainable_suffix=5),
        mixer=MixerConfig(embed_dim=(4, 4, 4), depth=(1, 1, 1)),
        tasks=("au", "va", "ah", "emi"),
        clip=ClipSpec(length=2, stride=2, policy="sequential"),
        batch_size=2,
        image_size=32,
        precision="float64",
    ).validate()


def random_batch(cfg: RunConfig, seed: int = 0, batch_size: int | None = None) -> ClipBatch:
    g = torch.Generator().manual_seed(seed)
    b, t = batch_size or cfg.batch_size, cfg.clip.length
    dt = torch.float64

    def bits(*shape):
        return (torch.rand(*shape, generator=g) < 0.5).to(dt)

    frames = features = None
    if cfg.input_kind == "frames":
        frames = torch.rand(b, t, 3, cfg.image_size, cfg.image_size, generator=g, dtype=dt)
    else:
        features = torch.randn(b, t, cfg.feature_dim, generator=g, dtype=dt)
    ones = lambda *s: torch.ones(*s, dtype=torch.bool)  # noqa: E731
    return ClipBatch(
        sample_ids=[f"probe{i}" for i in range(b)],
        frame_index=torch.arange(t).repeat(b, 1),
        frame_mask=ones(b, t),
        frames=frames,
        features=features,
        au=bits(b, t, 12), au_mask=ones(b, t, 12),
        va=torch.rand(b, t, 2, generator=g, dtype=dt) * 2 - 1, va_mask=ones(b, t, 2),
        ah=bits(b, t, 1), ah_mask=ones(b, t, 1),
        emi=torch.rand(b, 6, generator=g, dtype=dt), emi_mask=ones(b),
    )


@dataclass
class GroupResult:
    name: str
    n_params: int
    max_rel_error: float | None  # None when skipped
    skipped: bool = False


@dataclass
class GradcheckReport:
    groups: list[GroupResult] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        errs = [g.max_rel_error for g in self.groups if not g.skipped]
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return all(g.skipped or g.max_rel_error <= self.tolerance for g in self.groups)

    def failing(self) -> list[str]:
        return [g.name for g in self.groups if not g.skipped and g.max_rel_error > self.tolerance]

    def to_text(self) -> str:
        lines = [f"{'group':32s} {'params':>7s} {'max_rel_err':>12s}"]
        for g in self.groups:
            err = "skipped (frozen)" if g.skipped else f"{g.max_rel_error:.3e}"
            flag = "" if g.skipped or g.max_rel_error <= self.tolerance else "  FAIL"
            lines.append(f"{g.name:32s} {g.n_params:7d} {err:>12s}{flag}")
        return "\n".join(lines) + "\n"


def _loss(model: AffectModel, batch: ClipBatch) -> torch.Tensor:
    out = model.forward_batch(batch)
    return total_loss(task_losses(out, batch, model.cfg.tasks), model.cfg.loss_weights)


def gradcheck(cfg: RunConfig | None = None, *, model: AffectModel | None = None, step: float = 1e-5,
              tolerance: float = 1e-4, seed: int = 0) -> GradcheckReport:
    """Compare autograd against central differences, element by element.

    A group's error is ``max|analytic - numeric| / max|numeric|`` over its
    elements, so small entries are judged on the group's own gradient scale.
    Groups whose parameters are all frozen are reported as skipped.
    """
    cfg = cfg or (model.cfg if model is not None else gradcheck_config())
    model = model or build_model(cfg, seed=seed)
    model = model.double()
    batch = random_batch(cfg, seed)
    model.zero_grad(set_to_none=True)
    _loss(model, batch).backward()

    grouped: dict[str, list[tuple[str, torch.nn.Parameter]]] = {}
    for name, p in model.named_parameters():
        grouped.setdefault(group_of(name), []).append((name, p))

    report = GradcheckReport(tolerance=tolerance)
    with torch.no_grad():
        for gname, params in grouped.items():
            n = sum(p.numel() for _, p in params)
            live = [(nm, p) for nm, p in params if p.requires_grad]
            if not live:
                report.groups.append(GroupResult(gname, n, None, skipped=True))
                continue
            max_err, max_num = 0.0, 0.0
            for _, p in live:
                analytic = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
                flat = p.view(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + step
                    up = _loss(model, batch).item()
                    flat[i] = orig - step
                    down = _loss(model, batch).item()
                    flat[i] = orig
                    numeric = (up - down) / (2 * step)
                    max_err = max(max_err, abs(analytic.view(-1)[i].item() - numeric))
                    max_num = max(max_num, abs(numeric))
            rel = max_err / max_num if max_num > 1e-12 else max_err
            report.groups.append(GroupResult(gname, n, rel))
    return report
