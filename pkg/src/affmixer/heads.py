"""Task heads and training losses.

AU, AH and VA heads are affine maps on per-frame features (VA squashed with
tanh); the EMI head is an affine map on the per-sequence vector.  Every loss
takes an explicit validity mask and ignores masked entries entirely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from affmixer.errors import DimensionError
from affmixer.tam import AggregatedFeatures

log = logging.getLogger(__name__)

N_AU = 12
N_EMI = 6
AU_NAMES = ("AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26")
EMI_NAMES = ("Admiration", "Amusement", "Determination", "Empathic Pain", "Excitement", "Joy")
HEAD_DIMS = {"au": N_AU, "va": 2, "ah": 1, "emi": N_EMI}
_FIELD = {"au": "au_logits", "va": "va", "ah": "ah_logits", "emi": "emi"}


@dataclass
class TaskOutput:
    au_logits: Tensor | None = None  # B x T x 12
    va: Tensor | None = None  # B x T x 2, in (-1, 1)
    ah_logits: Tensor | None = None  # B x T x 1
    emi: Tensor | None = None  # B x 6

    def get(self, task: str) -> Tensor | None:
        return getattr(self, _FIELD[task])


class TaskHeads(nn.Module):
    def __init__(self, in_dim: int, tasks: tuple[str, ...]):
        super().__init__()
        self.in_dim = in_dim
        self.tasks = tuple(tasks)
        self.heads = nn.ModuleDict({t: nn.Linear(in_dim, HEAD_DIMS[t]) for t in self.tasks})

    def forward(self, agg: AggregatedFeatures) -> TaskOutput:
        out = TaskOutput()
        for task in self.tasks:
            setattr(out, _FIELD[task], self.head_forward(agg, task))
        return out

    def head_forward(self, agg: AggregatedFeatures, task: str) -> Tensor:
        if agg.per_frame.shape[-1] != self.in_dim:
            raise DimensionError(f"heads expect feature dim {self.in_dim}, got {agg.per_frame.shape[-1]}")
        head = self.heads[task]
        if task == "emi":
            return head(agg.per_sequence)
        y = head(agg.per_frame)
        return torch.tanh(y) if task == "va" else y


def _masked_bce(logits: Tensor, labels: Tensor, mask: Tensor, name: str) -> Tensor | None:
    if logits.shape != labels.shape or labels.shape != mask.shape:
        raise DimensionError(f"{name}: shapes {tuple(logits.shape)}, {tuple(labels.shape)}, {tuple(mask.shape)} differ")
    n = mask.sum()
    if n == 0:
        log.warning("%s: no valid entries in batch; term dropped", name)
        return None
    safe = torch.where(mask, labels, torch.zeros_like(labels))
    per = F.binary_cross_entropy_with_logits(logits, safe, reduction="none")
    return torch.where(mask, per, torch.zeros_like(per)).sum() / n


def loss_au(au_logits: Tensor, labels: Tensor, mask: Tensor) -> Tensor | None:
    return _masked_bce(au_logits, labels, mask, "loss_au")


def loss_ah(ah_logits: Tensor, labels: Tensor, mask: Tensor) -> Tensor | None:
    return _masked_bce(ah_logits, labels, mask, "loss_ah")


def ccc_torch(pred: Tensor, target: Tensor, eps: float = 1e-12) -> Tensor:
    """Differentiable CCC with population moments over a 1-D sample."""
    mp, mt = pred.mean(), target.mean()
    dp, dt = pred - mp, target - mt
    cov = (dp * dt).mean()
    denom = (dp * dp).mean() + (dt * dt).mean() + (mp - mt) ** 2
    if denom.detach() < eps:
        return torch.zeros((), dtype=pred.dtype, device=pred.device)
    return 2 * cov / denom


def loss_va(va_pred: Tensor, labels: Tensor, mask: Tensor) -> Tensor | None:
    """1 - CCC averaged over valence and arousal; each dim uses its own valid frames."""
    if va_pred.shape != labels.shape or labels.shape != mask.shape or labels.shape[-1] != 2:
        raise DimensionError(f"loss_va: shapes {tuple(va_pred.shape)}, {tuple(labels.shape)}, {tuple(mask.shape)}")
    terms = []
    for d in range(2):
        m = mask[..., d]
        if m.sum() < 2:
            continue
        terms.append(1.0 - ccc_torch(va_pred[..., d][m], labels[..., d][m]))
    if not terms:
        log.warning("loss_va: fewer than two valid frames; term dropped")
        return None
    return torch.stack(terms).mean()


def loss_emi(emi_pred: Tensor, labels: Tensor, mask: Tensor | None = None) -> Tensor | None:
    if emi_pred.shape != labels.shape:
        raise DimensionError(f"loss_emi: shapes {tuple(emi_pred.shape)} and {tuple(labels.shape)} differ")
    if mask is not None:
        if mask.sum() == 0:
            log.warning("loss_emi: no labelled sequences in batch; term dropped")
            return None
        emi_pred, labels = emi_pred[mask], labels[mask]
    return ((emi_pred - labels) ** 2).mean()


LOSSES = {"au": loss_au, "va": loss_va, "ah": loss_ah, "emi": loss_emi}


def task_losses(outputs: TaskOutput, batch, tasks: tuple[str, ...]) -> dict[str, Tensor]:
    """Per-task loss terms for a :class:`~affmixer.data.ClipBatch`; dropped terms are omitted."""
    terms = {}
    for task in tasks:
        pred = outputs.get(task)
        labels, mask = batch.labels(task)
        value = LOSSES[task](pred, labels.to(pred.dtype), mask)
        if value is not None:
            terms[task] = value
    return terms


def total_loss(terms: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    total = None
    for task, value in terms.items():
        contrib = weights.get(task, 1.0) * value
        total = contrib if total is None else total + contrib
    if total is None:
        return torch.zeros(())
    return total
