"""Latency and analytic-FLOP sweep over clip length."""

from __future__ import annotations

import csv
import dataclasses
import statistics
import time
from pathlib import Path

import torch

from affmixer.config import RunConfig
from affmixer.model import build_model, count_parameters, level_shapes
from affmixer.tam import tam_flops

BENCH_COLUMNS = [
    "T", "flops_tokenize", "flops_temporal", "flops_spatial", "flops_channel", "flops_total",
    "tam_median_ms", "tam_std_ms", "tam_iqr_ms", "model_median_ms", "model_std_ms", "runs", "params",
]


def time_call(fn, runs: int = 30, warmup: int = 3) -> list[float]:
    """Wall-clock milliseconds of ``runs`` calls after ``warmup`` discarded calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return times


def _spread(times: list[float]) -> tuple[float, float, float]:
    q = statistics.quantiles(times, n=4) if len(times) >= 2 else [times[0]] * 3
    std = statistics.stdev(times) if len(times) >= 2 else 0.0
    return statistics.median(times), std, q[2] - q[0]


def benchmark(cfg: RunConfig, t_values=(8, 16, 32), runs: int = 30, warmup: int = 3,
              out_dir: str | Path | None = None) -> list[dict]:
    """Per clip length: analytic TAM FLOPs and median forward latency (TAM alone and whole model)."""
    if runs < 30:
        raise ValueError("benchmark medians need at least 30 timed runs")
    rows = []
    for t in t_values:
        c = dataclasses.replace(cfg, clip=dataclasses.replace(cfg.clip, length=int(t))).validate()
        model = build_model(c).eval()
        flops = tam_flops(c.mixer, level_shapes(c), int(t))
        g = torch.Generator().manual_seed(0)
        if c.input_kind == "frames":
            x = torch.rand(1, t, 3, c.image_size, c.image_size, generator=g)
        else:
            x = torch.randn(1, t, c.feature_dim, generator=g)
        with torch.no_grad():
            pyramid = model.pyramid(x)
            tam_times = time_call(lambda: model.tam(pyramid), runs, warmup)
            model_times = time_call(lambda: model(x), runs, warmup)
        tam_med, tam_std, tam_iqr = _spread(tam_times)
        mod_med, mod_std, _ = _spread(model_times)
        rows.append({
            "T": int(t),
            **{f"flops_{k}": v for k, v in flops.items()},
            "tam_median_ms": tam_med, "tam_std_ms": tam_std, "tam_iqr_ms": tam_iqr,
            "model_median_ms": mod_med, "model_std_ms": mod_std,
            "runs": runs, "params": count_parameters(model),
        })
    if out_dir is not None:
        write_table(rows, Path(out_dir) / "bench.csv", BENCH_COLUMNS)
        from affmixer.plotting import plot_benchmark

        plot_benchmark(rows, Path(out_dir) / "bench.png")
    return rows


def write_table(rows: list[dict], path: Path, columns: list[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path
