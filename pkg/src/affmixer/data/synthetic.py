"""Synthetic frame sequences with planted, exactly known labels.

Frame layout for an ``S x S`` image split into a 4 x 4 cell grid:

* red, cell rows 0-2: AU k is active iff cell (k // 4, k % 4) is at 255.
* red, cell (3, 0): ambivalence/hesitancy flicker; alternates 128/255 by frame
  parity while present, 0 otherwise.
* green, whole plane: luminance level g; valence = a * g + b.
* blue, top half: checkerboard that swaps phase every frame with amplitude m,
  so the mean squared inter-frame difference is m^2; arousal = c * m^2 + d.
* blue, bottom half: six cells (2 x 3) holding the mimicry intensities.

All levels are integers on the 0-255 pixel grid (mimicry ratings are integers
on 0-100), so PNG storage is lossless and the labels written to the annotation
files follow from the generating parameters alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from affmixer.data.formats import Manifest, SampleRecord, save_manifest, write_annotation
from affmixer.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    seed: int = 0
    length: int = 48
    length_jitter: int = 0
    image_size: int = 64
    n_train: int = 32
    n_val: int = 16
    n_test: int = 0
    fps: float = 30.0
    au_rate: float = 0.5
    au_switch: float = 0.1
    luminance_range: tuple[float, float] = (0.0, 1.0)
    luminance_step: int = 8  # max per-frame change, in pixel levels
    valence_map: tuple[float, float] = (2.0, -1.0)
    motion_range: tuple[float, float] = (0.0, 1.0)
    arousal_map: tuple[float, float] = (2.0, -1.0)
    ah_rate: float = 0.5
    emi_range: tuple[int, int] = (0, 100)
    invalid_rate: float = 0.0

    def validate(self) -> None:
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"synthetic image_size must be a multiple of 32, got {self.image_size}")
        if self.length < 1 or self.length_jitter < 0 or self.length_jitter >= self.length:
            raise ConfigError("synthetic length must be >= 1 with 0 <= jitter < length")


def _edges(n: int, parts: int) -> np.ndarray:
    return (np.arange(parts + 1) * n) // parts


def render_frame(size: int, au: np.ndarray, ah_level: int, lum: int, motion: int, phase: int,
                 emi_levels: np.ndarray) -> np.ndarray:
    img = np.zeros((size, size, 3), dtype=np.uint8)
    c = size // 4
    for k in np.flatnonzero(au):
        r, q = divmod(int(k), 4)
        img[r * c:(r + 1) * c, q * c:(q + 1) * c, 0] = 255
    img[3 * c:4 * c, 0:c, 0] = ah_level
    img[:, :, 1] = lum
    half = size // 2
    ii, jj = np.indices((half, size))
    img[:half, :, 2] = np.where((ii + jj + phase) % 2 == 0, motion, 0)
    rows, cols = _edges(half, 2) + half, _edges(size, 3)
    for d, level in enumerate(emi_levels):
        r, q = divmod(d, 3)
        img[rows[r]:rows[r + 1], cols[q]:cols[q + 1], 2] = level
    return img


def _au_track(rng: np.random.Generator, n: int, rate: float, switch: float) -> np.ndarray:
    state = rng.random(12) < rate
    out = np.zeros((n, 12), dtype=bool)
    for t in range(n):
        out[t] = state
        flip = rng.random(12) < switch
        state = np.where(flip, rng.random(12) < rate, state)
    return out


def sample_parameters(spec: SyntheticSpec, rng: np.random.Generator, length: int) -> dict:
    lo, hi = (int(round(v * 255)) for v in spec.luminance_range)
    lum = np.empty(length, dtype=np.int64)
    level = int(rng.integers(lo, hi + 1))
    for t in range(length):
        lum[t] = level
        level = int(np.clip(level + rng.integers(-spec.luminance_step, spec.luminance_step + 1), lo, hi))
    mlo, mhi = (int(round(v * 255)) for v in spec.motion_range)
    ah = np.zeros(length, dtype=bool)
    if rng.random() < spec.ah_rate:
        a = int(rng.integers(0, length))
        b = int(rng.integers(a + 1, length + 1))
        ah[a:b] = True
    emi = rng.integers(spec.emi_range[0], spec.emi_range[1] + 1, size=6)
    return {
        "au": _au_track(rng, length, spec.au_rate, spec.au_switch),
        "lum": lum,
        "motion": int(rng.integers(mlo, mhi + 1)),
        "ah": ah,
        "emi": emi,
        "invalid": {t: rng.random(length) < spec.invalid_rate for t in ("au", "va", "ah")},
    }


def labels_from_parameters(spec: SyntheticSpec, params: dict) -> dict:
    a_v, b_v = spec.valence_map
    a_a, b_a = spec.arousal_map
    energy = (params["motion"] / 255.0) ** 2
    n = len(params["lum"])
    va = np.stack([a_v * params["lum"] / 255.0 + b_v, np.full(n, a_a * energy + b_a)], axis=1)
    return {
        "au": params["au"].astype(np.float64),
        "va": va,
        "ah": params["ah"].astype(np.float64)[:, None],
        "emi": params["emi"] / 100.0,
    }


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Manifest:
    """Write frames, annotations and ``manifest.jsonl`` under ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    counts = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    records = []
    for split, n_seq in counts.items():
        for i in range(n_seq):
            sid = f"{split}_{i:04d}"
            length = spec.length + int(rng.integers(-spec.length_jitter, spec.length_jitter + 1))
            params = sample_parameters(spec, rng, length)
            labels = labels_from_parameters(spec, params)
            seq_dir = out / sid
            frame_dir = seq_dir / "frames"
            frame_dir.mkdir(parents=True, exist_ok=True)
            emi_levels = np.round(params["emi"] * 255 / 100).astype(np.uint8)
            for t in range(length):
                ah_level = (128 if t % 2 == 0 else 255) if params["ah"][t] else 0
                img = render_frame(spec.image_size, params["au"][t], ah_level, int(params["lum"][t]),
                                   params["motion"], t % 2, emi_levels)
                Image.fromarray(img).save(frame_dir / f"{t:06d}.png", optimize=False)
            inv = params["invalid"]
            write_annotation(seq_dir / "au.csv", "au", labels["au"], ~inv["au"][:, None].repeat(12, 1))
            write_annotation(seq_dir / "va.csv", "va", labels["va"], ~inv["va"][:, None].repeat(2, 1))
            write_annotation(seq_dir / "ah.csv", "ah", labels["ah"], ~inv["ah"][:, None])
            write_annotation(seq_dir / "emi.csv", "emi", labels["emi"])
            records.append(SampleRecord(
                id=sid, split=split, fps=spec.fps, frames=f"{sid}/frames",
                annotations={t: f"{sid}/{t}.csv" for t in ("au", "va", "ah", "emi")},
            ))
    manifest = Manifest(records, out)
    save_manifest(manifest, out / "manifest.jsonl")
    log.info("wrote %d synthetic sequences to %s", len(records), out)
    return manifest
