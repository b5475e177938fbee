"""Figure helpers for run reports.  Everything renders to files with the Agg backend."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figsize(scale: float = 1.0) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * (math.sqrt(5.0) - 1.0) / 2.0


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(history: list[dict], path: str | Path, headline: str = "headline") -> Path:
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize())
        steps = [h["step"] for h in history]
        ax.plot(steps, [h["loss"] for h in history], lw=0.8, color="0.3", label="train loss")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        vals = [(h["step"], h["val"][headline]) for h in history if "val" in h and headline in h["val"]]
        if vals:
            ax2 = ax.twinx()
            ax2.plot(*zip(*vals), "o-", color="C1", ms=3, label=f"val {headline}")
            ax2.set_ylabel(f"val {headline}")
            ax2.spines["right"].set_visible(True)
        ax.set_title("training")
        return _save(fig, path)


def plot_ablation(rows: list[dict], path: str | Path, metric: str = "headline") -> Path:
    with plt.rc_context(REPORT_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(1.3))
        names = [r["variant"] for r in rows]
        ax1.bar(names, [r[metric] for r in rows], color="C0")
        ax1.set_ylabel(metric)
        ax1.set_title("validation metric")
        ax2.bar(names, [r["params"] / 1e3 for r in rows], color="C2")
        ax2.set_ylabel("parameters (k)")
        ax2.set_title("model size")
        for ax in (ax1, ax2):
            ax.tick_params(axis="x", rotation=20)
        return _save(fig, path)


def plot_benchmark(rows: list[dict], path: str | Path) -> Path:
    with plt.rc_context(REPORT_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(1.3))
        ts = [r["T"] for r in rows]
        for key, color in (("temporal", "C0"), ("spatial", "C1"), ("channel", "C2"), ("tokenize", "C3")):
            ax1.plot(ts, [r[f"flops_{key}"] / 1e6 for r in rows], "o-", ms=3, color=color, label=key)
        ax1.set_xlabel("clip length T")
        ax1.set_ylabel("MFLOPs per clip")
        ax1.set_xscale("log", base=2)
        ax1.set_yscale("log")
        ax1.legend(frameon=False)
        med = [r["tam_median_ms"] for r in rows]
        err = [r["tam_std_ms"] for r in rows]
        ax2.errorbar(ts, med, yerr=err, fmt="o-", ms=3, capsize=2, color="0.2")
        ax2.set_xlabel("clip length T")
        ax2.set_ylabel("TAM forward (ms, median)")
        ax2.set_xscale("log", base=2)
        return _save(fig, path)
