"""Versioned checkpoint container (a ``torch.save`` dict with a format tag)."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import torch

from affmixer.config import RunConfig
from affmixer.errors import DataValidationError
from affmixer.model import AffectModel, build_model

CKPT_FORMAT = "affmixer-checkpoint"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, model: AffectModel, optimizer=None, scheduler=None, *, step: int = 0,
                    history: list[dict] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": model.cfg.to_dict(),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "step": step,
        "history": history or [],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise DataValidationError(f"checkpoint not found: {path}") from exc
    if not isinstance(state, dict) or state.get("format") != CKPT_FORMAT:
        raise DataValidationError(f"{path} is not an {CKPT_FORMAT} file")
    if state.get("version") != CKPT_VERSION:
        raise DataValidationError(f"{path}: unsupported checkpoint version {state.get('version')}")
    return state


def load_checkpoint(path: str | Path) -> tuple[AffectModel, dict[str, Any]]:
    """Rebuild the model from the embedded config and load its weights."""
    state = read_checkpoint(path)
    cfg = RunConfig.from_dict(state["config"]).validate()
    model = build_model(cfg)
    model.load_state_dict(state["model"])
    return model, state
