"""Mixer-level ablation: same seed and budget, one row per level subset."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import torch

from affmixer.config import RunConfig
from affmixer.data.formats import Manifest
from affmixer.engine.bench import _spread, time_call, write_table
from affmixer.engine.evaluate import evaluate_model
from affmixer.engine.train import train
from affmixer.model import count_parameters, level_shapes
from affmixer.tam import tam_flops

log = logging.getLogger(__name__)

# 3-level, 2-level (mid + low resolution), single low-resolution mixer
DEFAULT_VARIANTS: tuple[tuple[int, ...], ...] = ((1, 2, 3), (2, 3), (3,))
ABLATION_COLUMNS = ["variant", "levels", "headline", "params", "tam_flops", "latency_ms", "latency_std_ms", "steps"]


def variant_name(levels) -> str:
    return "single" if len(levels) == 1 else f"{len(levels)}-level"


def run_ablation(base: RunConfig, manifest: Manifest, variants=DEFAULT_VARIANTS, *, out_dir: str | Path | None = None,
                 latency_runs: int = 30) -> list[dict]:
    out = Path(out_dir or base.out_dir)
    rows = []
    for levels in variants:
        levels = tuple(int(v) for v in levels)
        cfg = dataclasses.replace(base, mixer=dataclasses.replace(base.mixer, levels=levels)).validate()
        name = variant_name(levels)
        log.info("ablation variant %s levels=%s", name, levels)
        result = train(cfg, manifest, out_dir=out / f"levels_{''.join(map(str, levels))}", validate=False)
        model = result.model
        report = evaluate_model(model, manifest, cfg.val_split)
        x = torch.rand(1, cfg.clip.length, 3, cfg.image_size, cfg.image_size) if cfg.input_kind == "frames" \
            else torch.randn(1, cfg.clip.length, cfg.feature_dim)
        model.eval()
        with torch.no_grad():
            med, std, _ = _spread(time_call(lambda: model(x), latency_runs, 2))
        rows.append({
            "variant": name,
            "levels": "+".join(map(str, levels)),
            "headline": report.headline(cfg.tasks),
            **report.as_flat(),
            "params": count_parameters(model),
            "tam_flops": tam_flops(cfg.mixer, level_shapes(cfg), cfg.clip.length)["total"],
            "latency_ms": med,
            "latency_std_ms": std,
            "steps": cfg.steps,
        })
    if out_dir is not None or base.out_dir:
        write_table(rows, out / "ablation.csv", ABLATION_COLUMNS)
        from affmixer.plotting import plot_ablation

        plot_ablation(rows, out / "ablation.png")
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':10s} {'levels':8s} {'headline':>9s} {'params':>9s} {'latency_ms':>11s}"]
    for r in rows:
        lines.append(f"{r['variant']:10s} {r['levels']:8s} {r['headline']:9.4f} {r['params']:9d} {r['latency_ms']:11.2f}")
    return "\n".join(lines) + "\n"
