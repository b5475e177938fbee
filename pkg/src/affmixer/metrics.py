"""Evaluation metrics over streaming, mergeable sufficient statistics.

F1 and mean-F1 for binary detection, concordance correlation (CCC) for
valence/arousal, Pearson correlation for mimicry intensity.  All accumulators
hold float64/int64 sums and merge by field-wise addition, so sharded
evaluation reproduces the single-pass result.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from affmixer.errors import InsufficientDataError

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class BinaryCounts:
    """Per-class confusion counts; every field is an int64 array of shape (K,)."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "BinaryCounts":
        return cls(*(np.zeros(k, dtype=np.int64) for _ in range(4)))

    def update(self, pred, label, mask=None) -> None:
        """Add observations of shape (..., K); ``mask`` selects the valid entries."""
        pred = np.asarray(pred).astype(bool).reshape(-1, len(self.tp))
        label = np.asarray(label).astype(bool).reshape(-1, len(self.tp))
        valid = np.ones_like(pred) if mask is None else np.asarray(mask).astype(bool).reshape(pred.shape)
        self.tp += (pred & label & valid).sum(0)
        self.fp += (pred & ~label & valid).sum(0)
        self.fn += (~pred & label & valid).sum(0)
        self.tn += (~pred & ~label & valid).sum(0)

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "BinaryCounts") -> "BinaryCounts":
        return BinaryCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


@dataclass
class MomentStats:
    """Per-dimension sums (n, Σx, Σy, Σx², Σy², Σxy), x = prediction, y = label."""

    n: np.ndarray
    sum_x: np.ndarray
    sum_y: np.ndarray
    sum_xx: np.ndarray
    sum_yy: np.ndarray
    sum_xy: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "MomentStats":
        return cls(*(np.zeros(k, dtype=np.float64) for _ in range(6)))

    def update(self, x, y, mask=None) -> None:
        k = len(self.n)
        x = np.asarray(x, dtype=np.float64).reshape(-1, k)
        y = np.asarray(y, dtype=np.float64).reshape(-1, k)
        w = np.ones_like(x) if mask is None else np.asarray(mask).astype(np.float64).reshape(x.shape)
        x, y = np.where(w > 0, x, 0.0), np.where(w > 0, y, 0.0)
        self.n += w.sum(0)
        self.sum_x += x.sum(0)
        self.sum_y += y.sum(0)
        self.sum_xx += (x * x).sum(0)
        self.sum_yy += (y * y).sum(0)
        self.sum_xy += (x * y).sum(0)

    def moments(self):
        n = self.n
        mx, my = self.sum_x / n, self.sum_y / n
        vx = np.maximum(self.sum_xx / n - mx * mx, 0.0)
        vy = np.maximum(self.sum_yy / n - my * my, 0.0)
        cov = self.sum_xy / n - mx * my
        return mx, my, vx, vy, cov

    def __add__(self, other: "MomentStats") -> "MomentStats":
        return MomentStats(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


def f1(counts: BinaryCounts) -> np.ndarray:
    """Per-class 2PR/(P+R), 0 where precision + recall is 0."""
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (counts.tp, counts.fp, counts.fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        score = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return score


def f_au(per_au_counts: BinaryCounts) -> float:
    return float(np.mean(f1(per_au_counts)))


def ccc(stats: MomentStats) -> np.ndarray:
    if np.any(stats.n < 2):
        raise InsufficientDataError(f"CCC needs at least two samples per dimension, got n={stats.n.tolist()}")
    mx, my, vx, vy, cov = stats.moments()
    denom = vx + vy + (mx - my) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom < EPS, 0.0, 2 * cov / denom)


def pearson(stats: MomentStats) -> np.ndarray:
    if np.any(stats.n < 2):
        raise InsufficientDataError(f"Pearson needs at least two samples per dimension, got n={stats.n.tolist()}")
    _, _, vx, vy, cov = stats.moments()
    degenerate = (vx < EPS) | (vy < EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(degenerate, 0.0, cov / np.sqrt(vx * vy))
    return np.clip(r, -1.0, 1.0)


def p_va(stats_v: MomentStats, stats_a: MomentStats) -> tuple[float, float, float]:
    pv, pa = float(ccc(stats_v)[0]), float(ccc(stats_a)[0])
    return pv, pa, (pv + pa) / 2


def p_emi(stats: MomentStats) -> float:
    return float(np.mean(pearson(stats)))


@dataclass
class MetricReport:
    f_au: float | None = None
    f_au_per: list[float] | None = None
    p_va: tuple[float, float, float] | None = None
    p_emi: float | None = None
    p_emi_per: list[float] | None = None
    f_ah: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def headline(self, tasks) -> float:
        vals = {"au": self.f_au, "va": self.p_va[2] if self.p_va else None, "emi": self.p_emi, "ah": self.f_ah}
        picked = [vals[t] for t in tasks if vals[t] is not None]
        return float(np.mean(picked)) if picked else float("nan")

    def as_flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        if self.f_au is not None:
            out["f_au"] = self.f_au
            out.update({f"f1_au_{i}": v for i, v in enumerate(self.f_au_per or [])})
        if self.p_va is not None:
            out.update({"p_v": self.p_va[0], "p_a": self.p_va[1], "p_va": self.p_va[2]})
        if self.p_emi is not None:
            out["p_emi"] = self.p_emi
            out.update({f"pearson_emi_{i}": v for i, v in enumerate(self.p_emi_per or [])})
        if self.f_ah is not None:
            out["f_ah"] = self.f_ah
        out.update({f"n_{k}": v for k, v in self.counts.items()})
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v:.6f}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in self.as_flat().items())

    def write(self, stem: str | Path) -> None:
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.to_text())
        stem.with_suffix(".json").write_text(json.dumps(asdict(self), indent=2))


class MetricAccumulator:
    """Streaming statistics for all four tasks.  Single writer; combine shards with :meth:`merge`."""

    def __init__(self, tasks=("au", "va", "ah", "emi")):
        self.tasks = tuple(tasks)
        self.au = BinaryCounts.zeros(12)
        self.ah = BinaryCounts.zeros(1)
        self.va = MomentStats.zeros(2)
        self.emi = MomentStats.zeros(6)

    def update_au(self, pred, label, mask=None) -> None:
        self.au.update(pred, label, mask)

    def update_ah(self, pred, label, mask=None) -> None:
        self.ah.update(pred, label, mask)

    def update_va(self, pred, label, mask=None) -> None:
        self.va.update(pred, label, mask)

    def update_emi(self, pred, label, mask=None) -> None:
        self.emi.update(pred, label, mask)

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        out = MetricAccumulator(tuple(dict.fromkeys(self.tasks + other.tasks)))
        out.au, out.ah = self.au + other.au, self.ah + other.ah
        out.va, out.emi = self.va + other.va, self.emi + other.emi
        return out

    __add__ = merge

    def report(self) -> MetricReport:
        rep = MetricReport()
        if "au" in self.tasks:
            per = f1(self.au)
            rep.f_au, rep.f_au_per = float(per.mean()), per.tolist()
            rep.counts["au"] = int(self.au.total.max())
        if "ah" in self.tasks:
            rep.f_ah = float(f1(self.ah)[0])
            rep.counts["ah"] = int(self.ah.total[0])
        if "va" in self.tasks:
            rep.counts["va"] = int(self.va.n.min())
            v = MomentStats(*(a[:1] for a in asdict_arrays(self.va)))
            a = MomentStats(*(a[1:] for a in asdict_arrays(self.va)))
            try:
                rep.p_va = p_va(v, a)
            except InsufficientDataError as exc:
                log.warning("VA metric undefined (%s); reporting 0", exc)
                rep.p_va = (0.0, 0.0, 0.0)
        if "emi" in self.tasks:
            rep.counts["emi"] = int(self.emi.n.min())
            try:
                per = pearson(self.emi)
            except InsufficientDataError as exc:
                log.warning("EMI metric undefined (%s); reporting 0", exc)
                per = np.zeros(6)
            rep.p_emi, rep.p_emi_per = float(per.mean()), per.tolist()
        return rep


def asdict_arrays(stats: MomentStats) -> list[np.ndarray]:
    return [getattr(stats, f.name) for f in fields(stats)]
