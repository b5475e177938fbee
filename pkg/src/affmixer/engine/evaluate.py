"""Split evaluation, prediction files, and scoring of prediction files."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from affmixer.config import ClipSpec
from affmixer.data.clips import ClipLoader, Sequence, SequenceStore
from affmixer.data.formats import Manifest
from affmixer.errors import DataValidationError
from affmixer.heads import N_AU
from affmixer.metrics import MetricAccumulator, MetricReport
from affmixer.model import AffectModel

log = logging.getLogger(__name__)


@dataclass
class SamplePrediction:
    id: str
    au_logits: np.ndarray | None = None  # L x 12
    va: np.ndarray | None = None  # L x 2
    ah_logits: np.ndarray | None = None  # L x 1
    emi: np.ndarray | None = None  # 6, frame-weighted mean over clips


def predict_sequences(model: AffectModel, store: SequenceStore, indices=None, batch_size: int = 8) -> list[SamplePrediction]:
    """Non-overlapping sequential clips so every frame is predicted exactly once."""
    cfg = model.cfg
    spec = ClipSpec(length=cfg.clip.length, stride=cfg.clip.length, policy="sequential")
    indices = range(len(store)) if indices is None else indices
    tasks = cfg.tasks
    preds = []
    model.eval()
    for i in indices:
        seq = store.get(i)
        n = len(seq)
        sub = SequenceStore(store.manifest, None, store.feature_dim)
        sub.records, sub._cache = [store.records[i]], {seq.id: seq}
        loader = ClipLoader(sub, spec, batch_size, shuffle=False, image_size=cfg.image_size)
        pred = SamplePrediction(seq.id)
        buf = {t: np.zeros((n, d)) for t, d in (("au", N_AU), ("va", 2), ("ah", 1)) if t in tasks}
        emi_sum, emi_w = np.zeros(6), 0.0
        with torch.no_grad():
            for batch in loader.epoch(0):
                out = model.forward_batch(batch)
                idx = batch.frame_index.numpy()
                valid = idx >= 0
                for task in buf:
                    buf[task][idx[valid]] = out.get(task).double().numpy()[valid]
                if "emi" in tasks:
                    w = valid.sum(1).astype(np.float64)
                    emi_sum += (out.emi.double().numpy() * w[:, None]).sum(0)
                    emi_w += w.sum()
        pred.au_logits, pred.va, pred.ah_logits = buf.get("au"), buf.get("va"), buf.get("ah")
        if "emi" in tasks:
            pred.emi = emi_sum / max(emi_w, 1.0)
        preds.append(pred)
    return preds


def accumulate(preds: list[SamplePrediction], sequences: list[Sequence], tasks) -> MetricAccumulator:
    acc = MetricAccumulator(tasks)
    for pred, seq in zip(preds, sequences):
        if "au" in tasks:
            acc.update_au(pred.au_logits > 0, seq.au > 0.5, seq.au_valid)
        if "ah" in tasks:
            acc.update_ah(pred.ah_logits > 0, seq.ah > 0.5, seq.ah_valid)
        if "va" in tasks:
            acc.update_va(pred.va, seq.va, seq.va_valid)
        if "emi" in tasks and seq.emi_valid and len(seq):
            acc.update_emi(pred.emi[None], seq.emi[None])
    return acc


def evaluate_model(model: AffectModel, manifest: Manifest, split: str, *, shards: int = 1,
                   pred_dir: str | Path | None = None, store: SequenceStore | None = None) -> MetricReport:
    """Stream a split through ``model``; with ``shards > 1`` each shard accumulates separately and merges."""
    cfg = model.cfg
    store = store or SequenceStore(manifest, split, cfg.feature_dim if cfg.input_kind == "features" else None)
    if len(store) == 0:
        log.warning("split %r is empty; metrics take their degenerate values", split)
    shard_idx = [list(range(s, len(store), shards)) for s in range(shards)]
    for idx in shard_idx:  # load sequentially; the cache is not shared-write safe
        for i in idx:
            store.get(i)

    def run(idx):
        preds = predict_sequences(model, store, idx)
        return preds, accumulate(preds, [store.get(i) for i in idx], cfg.tasks)

    if shards == 1:
        results = [run(shard_idx[0])]
    else:
        with ThreadPoolExecutor(max_workers=shards) as pool:
            results = list(pool.map(run, shard_idx))
    acc = MetricAccumulator(cfg.tasks)
    for _, part in results:
        acc = acc.merge(part)
    if pred_dir is not None:
        write_predictions(pred_dir, [p for preds, _ in results for p in preds], cfg.tasks)
    return acc.report()


def evaluate(checkpoint, manifest: Manifest, split: str, **kwargs) -> MetricReport:
    """``checkpoint`` may be a path or an already loaded :class:`AffectModel`."""
    from affmixer.engine.checkpoint import load_checkpoint

    model = checkpoint if isinstance(checkpoint, AffectModel) else load_checkpoint(checkpoint)[0]
    return evaluate_model(model, manifest, split, **kwargs)


def write_predictions(pred_dir: str | Path, preds: list[SamplePrediction], tasks) -> None:
    """Per-task CSVs: one file per sample for frame tasks, one ``emi.csv`` for all samples."""
    root = Path(pred_dir)
    for task in ("au", "va", "ah"):
        if task in tasks:
            (root / task).mkdir(parents=True, exist_ok=True)
    emi_rows = []
    for p in preds:
        if "au" in tasks:
            lines = ["frame_id," + ",".join(f"au{k + 1}" for k in range(N_AU))]
            lines += [f"{t}," + ",".join(str(int(v)) for v in row) for t, row in enumerate(p.au_logits > 0)]
            (root / "au" / f"{p.id}.csv").write_text("\n".join(lines) + "\n")
        if "va" in tasks:
            lines = ["frame_id,valence,arousal"] + [f"{t},{v:.6f},{a:.6f}" for t, (v, a) in enumerate(p.va)]
            (root / "va" / f"{p.id}.csv").write_text("\n".join(lines) + "\n")
        if "ah" in tasks:
            lines = ["frame_id,label"] + [f"{t},{int(v)}" for t, v in enumerate(p.ah_logits[:, 0] > 0)]
            (root / "ah" / f"{p.id}.csv").write_text("\n".join(lines) + "\n")
        if "emi" in tasks:
            emi_rows.append(f"{p.id}," + ",".join(f"{v:.6f}" for v in p.emi))
    if "emi" in tasks:
        root.mkdir(parents=True, exist_ok=True)
        (root / "emi.csv").write_text("\n".join(["sample_id," + ",".join(f"d{k + 1}" for k in range(6)), *emi_rows]) + "\n")


def _read_csv(path: Path, ncol: int) -> np.ndarray:
    if not path.exists():
        raise DataValidationError(f"missing prediction file {path}")
    rows = [line.split(",") for line in path.read_text().splitlines()[1:] if line.strip()]
    if any(len(r) != ncol + 1 for r in rows):
        raise DataValidationError(f"{path}: expected {ncol + 1} columns")
    return np.asarray([[float(c) for c in r[1:]] for r in rows]).reshape(-1, ncol)


def read_predictions(pred_dir: str | Path, sample_ids, tasks) -> list[SamplePrediction]:
    """Inverse of :func:`write_predictions`; binary labels come back as ±1 pseudo-logits."""
    root = Path(pred_dir)
    emi = {}
    if "emi" in tasks:
        for line in (root / "emi.csv").read_text().splitlines()[1:]:
            if line.strip():
                sid, *vals = line.split(",")
                emi[sid] = np.asarray([float(v) for v in vals])
    out = []
    for sid in sample_ids:
        p = SamplePrediction(sid)
        if "au" in tasks:
            p.au_logits = _read_csv(root / "au" / f"{sid}.csv", N_AU) * 2 - 1
        if "va" in tasks:
            p.va = _read_csv(root / "va" / f"{sid}.csv", 2)
        if "ah" in tasks:
            p.ah_logits = _read_csv(root / "ah" / f"{sid}.csv", 1) * 2 - 1
        if "emi" in tasks:
            if sid not in emi:
                raise DataValidationError(f"emi.csv has no row for {sid}")
            p.emi = emi[sid]
        out.append(p)
    return out


def evaluate_predictions(pred_dir: str | Path, manifest: Manifest, split: str, tasks) -> MetricReport:
    store = SequenceStore(manifest, split)
    seqs = [store.get(i) for i in range(len(store))]
    preds = read_predictions(pred_dir, [s.id for s in seqs], tasks)
    for p, s in zip(preds, seqs):
        for task, arr in (("au", p.au_logits), ("va", p.va), ("ah", p.ah_logits)):
            if arr is not None and len(arr) != len(s):
                raise DataValidationError(f"{task} predictions for {s.id} have {len(arr)} rows, sequence has {len(s)}")
    return accumulate(preds, seqs, tasks).report()


def labels_as_predictions(manifest: Manifest, split: str, pred_dir: str | Path, tasks) -> None:
    """Write the ground truth in prediction-file format (an oracle submission)."""
    store = SequenceStore(manifest, split)
    preds = []
    for i in range(len(store)):
        s = store.get(i)
        preds.append(SamplePrediction(s.id, au_logits=s.au * 2 - 1, va=s.va, ah_logits=s.ah * 2 - 1, emi=s.emi))
    write_predictions(pred_dir, preds, tasks)
