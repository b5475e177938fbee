"""Single-writer training loop with validation cadence and exact resume."""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from affmixer.backbone import FreezeReport
from affmixer.config import RunConfig, save_config
from affmixer.data.clips import ClipLoader, SequenceStore
from affmixer.data.formats import Manifest
from affmixer.engine.checkpoint import read_checkpoint, save_checkpoint
from affmixer.engine.evaluate import evaluate_model
from affmixer.errors import DivergenceError, NonFiniteError
from affmixer.heads import task_losses, total_loss
from affmixer.model import AffectModel, build_model

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: AffectModel
    history: list[dict]
    last_checkpoint: Path | None
    best_checkpoint: Path | None
    best_metric: float
    freeze: FreezeReport | None


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def make_optimizer(cfg: RunConfig, model: AffectModel):
    params = [p for p in model.parameters() if p.requires_grad]
    o = cfg.optim
    if o.kind == "adam":
        opt = torch.optim.Adam(params, lr=o.lr, weight_decay=o.weight_decay)
    elif o.kind == "adamw":
        opt = torch.optim.AdamW(params, lr=o.lr, weight_decay=o.weight_decay)
    else:
        opt = torch.optim.SGD(params, lr=o.lr, momentum=0.9, weight_decay=o.weight_decay)
    sched = None
    if o.schedule == "cosine":
        total = max(cfg.steps, 1)
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1 + math.cos(math.pi * min(s, total) / total)))
    return opt, sched


def train_step(model: AffectModel, optimizer, batch, cfg: RunConfig, step: int) -> dict:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    try:
        out = model.forward_batch(batch)
    except NonFiniteError as exc:
        raise DivergenceError(step, str(exc)) from exc
    terms = task_losses(out, batch, cfg.tasks)
    loss = total_loss(terms, cfg.loss_weights)
    if not torch.isfinite(loss):
        raise DivergenceError(step)
    if loss.requires_grad:
        loss.backward()
        optimizer.step()
    return {"step": step, "loss": float(loss.detach()), "terms": {k: float(v.detach()) for k, v in terms.items()}}


def train(cfg: RunConfig, manifest: Manifest, *, out_dir: str | Path | None = None, resume: str | Path | None = None,
          stop_at: int | None = None, validate: bool = True, write_outputs: bool = True) -> TrainResult:
    """Train for ``cfg.steps`` optimizer steps (or until ``stop_at``), validating every ``cfg.val_every``.

    Checkpoints (``last.pt`` and ``best.pt``) are written at each validation
    point and at the final step.  ``resume`` continues from a checkpoint;
    because batches are indexed by step, the continuation is exact.
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    if write_outputs:
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.yaml")
    seed_everything(cfg.seed)
    model = build_model(cfg)
    freeze = model.freeze()
    if freeze is not None:
        log.info("freeze policy: %d frozen / %d trainable backbone params", freeze.frozen_params, freeze.trainable_params)
    optimizer, scheduler = make_optimizer(cfg, model)
    history: list[dict] = []
    start = 0
    if resume is not None:
        state = read_checkpoint(resume)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        if scheduler is not None and state.get("scheduler"):
            scheduler.load_state_dict(state["scheduler"])
        start, history = int(state["step"]), list(state["history"])
        log.info("resumed from %s at step %d", resume, start)

    feature_dim = cfg.feature_dim if cfg.input_kind == "features" else None
    loader = ClipLoader(SequenceStore(manifest, "train", feature_dim), cfg.clip, cfg.batch_size, cfg.seed,
                        shuffle=True, image_size=cfg.image_size)
    val_store = SequenceStore(manifest, cfg.val_split, feature_dim)
    best_metric, best_path, last_path = -math.inf, None, None
    for h in history:
        if "val" in h:
            best_metric = max(best_metric, h["val"]["headline"])
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    for step in range(start, end):
        rec = train_step(model, optimizer, loader.batch_at(step), cfg, step + 1)
        if scheduler is not None:
            scheduler.step()
        history.append(rec)
        if (step + 1) % cfg.log_every == 0:
            log.info("step %d loss %.5f", step + 1, rec["loss"])
        boundary = (step + 1) % cfg.val_every == 0 or step + 1 == end
        if boundary and validate and len(val_store):
            report = evaluate_model(model, manifest, cfg.val_split, store=val_store)
            rec["val"] = {"headline": report.headline(cfg.tasks), **report.as_flat()}
            log.info("step %d validation %s", step + 1, json.dumps({k: round(v, 4) for k, v in rec["val"].items()}))
            if rec["val"]["headline"] > best_metric:
                best_metric = rec["val"]["headline"]
                if write_outputs:
                    best_path = save_checkpoint(out / "best.pt", model, optimizer, scheduler, step=step + 1,
                                                history=history)
        if boundary and write_outputs:
            last_path = save_checkpoint(out / "last.pt", model, optimizer, scheduler, step=step + 1, history=history)
    if write_outputs:
        _write_history(history, out)
    return TrainResult(model, history, last_path, best_path, best_metric, freeze)


def _write_history(history: list[dict], out: Path) -> None:
    from affmixer.plotting import plot_loss_curve

    (out / "history.jsonl").write_text("".join(json.dumps(h) + "\n" for h in history))
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "val_headline"])
        for h in history:
            writer.writerow([h["step"], f"{h['loss']:.8f}", f"{h['val']['headline']:.6f}" if "val" in h else ""])
    if history:
        plot_loss_curve(history, out / "loss_curve.png")
