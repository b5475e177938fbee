"""Sequence loading and fixed-length clip batching with padding masks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from affmixer.config import ClipSpec
from affmixer.data.formats import Manifest, SampleRecord, read_annotation, read_features
from affmixer.errors import DataValidationError, DimensionError

log = logging.getLogger(__name__)


@dataclass
class Sequence:
    id: str
    frames: np.ndarray | None  # L x H x W x 3 uint8
    features: np.ndarray | None  # L x F float32
    au: np.ndarray
    au_valid: np.ndarray
    va: np.ndarray
    va_valid: np.ndarray
    ah: np.ndarray
    ah_valid: np.ndarray
    emi: np.ndarray
    emi_valid: bool

    def __len__(self) -> int:
        data = self.frames if self.frames is not None else self.features
        return len(data)


def read_frame_dir(path: Path) -> np.ndarray:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        return np.zeros((0, 0, 0, 3), dtype=np.uint8)
    return np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])


def _frame_labels(manifest: Manifest, rec: SampleRecord, task: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    ncol = {"au": 12, "va": 2, "ah": 1}[task]
    if task not in rec.annotations:
        return np.zeros((n, ncol)), np.zeros((n, ncol), dtype=bool)
    values, valid = read_annotation(manifest.resolve(rec.annotations[task]), task, rec.sentinels.get(task))
    if len(values) != n:
        raise DataValidationError(f"{rec.id}: {task} annotation has {len(values)} rows for {n} frames")
    return values, valid


def load_sequence(manifest: Manifest, rec: SampleRecord, feature_dim: int | None = None) -> Sequence:
    frames = features = None
    if rec.frames is not None:
        frames = read_frame_dir(manifest.resolve(rec.frames))
        n = len(frames)
    else:
        features = read_features(manifest.resolve(rec.features), feature_dim)
        n = len(features)
    au, au_v = _frame_labels(manifest, rec, "au", n)
    va, va_v = _frame_labels(manifest, rec, "va", n)
    ah, ah_v = _frame_labels(manifest, rec, "ah", n)
    if "emi" in rec.annotations:
        emi, emi_v = read_annotation(manifest.resolve(rec.annotations["emi"]), "emi", rec.sentinels.get("emi"))
        emi_valid = bool(emi_v.all())
    else:
        emi, emi_valid = np.zeros(6), False
    return Sequence(rec.id, frames, features, au, au_v, va, va_v, ah, ah_v, emi, emi_valid)


def clip_windows(length: int, spec: ClipSpec, rng: np.random.Generator | None = None) -> list[int]:
    """Start indices of the clips covering a sequence of ``length`` frames.

    A window is kept if it is the first one or contributes at least one frame
    the previous window did not cover; the tail window is padded.
    """
    if length <= 0:
        return [0]
    offset = 0
    if spec.policy == "random-start" and rng is not None:
        offset = int(rng.integers(0, min(spec.stride, length)))
    starts = []
    s = offset
    while s < length:
        if not starts or s + spec.length - spec.stride < length:
            starts.append(s)
        s += spec.stride
    return starts


@dataclass
class ClipBatch:
    sample_ids: list[str]
    frame_index: Tensor  # B x T, -1 at padding
    frame_mask: Tensor  # B x T bool
    frames: Tensor | None  # B x T x 3 x H x W in [0, 1]
    features: Tensor | None  # B x T x F
    au: Tensor
    au_mask: Tensor
    va: Tensor
    va_mask: Tensor
    ah: Tensor
    ah_mask: Tensor
    emi: Tensor  # B x 6
    emi_mask: Tensor  # B

    def labels(self, task: str) -> tuple[Tensor, Tensor]:
        return getattr(self, task), getattr(self, f"{task}_mask")

    def __len__(self) -> int:
        return len(self.sample_ids)


def make_clip(seq: Sequence, start: int, length: int, image_size: int | None = None) -> dict:
    n = len(seq)
    idx = np.arange(start, start + length)
    valid = idx < n
    take = np.where(valid, idx, 0)

    def gather(arr, fill_shape):
        if n == 0:
            return np.zeros((length, *fill_shape), dtype=np.float32)
        out = arr[take].astype(np.float32)
        out[~valid] = 0
        return out

    def gather_mask(arr):
        if n == 0:
            return np.zeros((length, arr.shape[1]), dtype=bool)
        return arr[take] & valid[:, None]

    clip = {
        "id": seq.id,
        "frame_index": np.where(valid, idx, -1),
        "frame_mask": valid,
        "au": gather(seq.au, (12,)),
        "au_mask": gather_mask(seq.au_valid),
        "va": gather(seq.va, (2,)),
        "va_mask": gather_mask(seq.va_valid),
        "ah": gather(seq.ah, (1,)),
        "ah_mask": gather_mask(seq.ah_valid),
        "emi": seq.emi.astype(np.float32),
        "emi_mask": seq.emi_valid and n > 0,
    }
    if seq.frames is not None:
        if n == 0:
            if image_size is None:
                raise DataValidationError(f"{seq.id}: empty frame sequence and no image size to pad with")
            clip["frames"] = np.zeros((length, 3, image_size, image_size), dtype=np.float32)
        else:
            f = seq.frames[take].astype(np.float32) / 255.0
            f[~valid] = 0
            clip["frames"] = f.transpose(0, 3, 1, 2)
    else:
        clip["features"] = gather(seq.features, (seq.features.shape[1],))
    return clip


def collate(clips: list[dict]) -> ClipBatch:
    def stack(key, dtype=torch.float32):
        return torch.as_tensor(np.stack([c[key] for c in clips]), dtype=dtype)

    frames = features = None
    if clips[0].get("frames") is not None:
        frames = stack("frames")
    elif "features" in clips[0]:
        features = stack("features")
    return ClipBatch(
        sample_ids=[c["id"] for c in clips],
        frame_index=stack("frame_index", torch.long),
        frame_mask=stack("frame_mask", torch.bool),
        frames=frames,
        features=features,
        au=stack("au"),
        au_mask=stack("au_mask", torch.bool),
        va=stack("va"),
        va_mask=stack("va_mask", torch.bool),
        ah=stack("ah"),
        ah_mask=stack("ah_mask", torch.bool),
        emi=stack("emi"),
        emi_mask=torch.tensor([bool(c["emi_mask"]) for c in clips]),
    )


class SequenceStore:
    """Loads and caches decoded sequences of one manifest split."""

    def __init__(self, manifest: Manifest, split: str | None = None, feature_dim: int | None = None):
        self.manifest = manifest
        self.records = manifest.records if split is None else manifest.split(split)
        self.feature_dim = feature_dim
        self._cache: dict[str, Sequence] = {}

    def __len__(self) -> int:
        return len(self.records)

    def get(self, i: int) -> Sequence:
        rec = self.records[i]
        if rec.id not in self._cache:
            seq = load_sequence(self.manifest, rec, self.feature_dim)
            if len(seq) == 0:
                log.warning("sample %s has no frames; it yields one fully padded clip", rec.id)
            self._cache[rec.id] = seq
        return self._cache[rec.id]


class ClipLoader:
    """Deterministic epoch-indexed clip batching.

    Epoch ``e`` draws its window offsets and shuffle order from
    ``default_rng([seed, e])``, so any step can be reproduced without carrying
    RNG state, which is what makes checkpoint resume exact.
    """

    def __init__(self, store: SequenceStore, spec: ClipSpec, batch_size: int, seed: int = 0, shuffle: bool = True,
                 image_size: int | None = None):
        spec.validate()
        self.store, self.spec, self.batch_size = store, spec, batch_size
        self.image_size = image_size
        self.seed, self.shuffle = seed, shuffle

    def clip_index(self, epoch: int = 0) -> list[tuple[int, int]]:
        rng = np.random.default_rng([self.seed, epoch])
        index = [(i, s) for i in range(len(self.store)) for s in clip_windows(len(self.store.get(i)), self.spec, rng)]
        if self.shuffle:
            order = rng.permutation(len(index))
            index = [index[j] for j in order]
        return index

    def batches_per_epoch(self) -> int:
        return -(-len(self.clip_index(0)) // self.batch_size)

    def epoch(self, epoch: int = 0) -> Iterator[ClipBatch]:
        index = self.clip_index(epoch)
        for b in range(0, len(index), self.batch_size):
            yield self._collate(index[b:b + self.batch_size])

    def batch_at(self, step: int) -> ClipBatch:
        per_epoch = self.batches_per_epoch()
        if per_epoch == 0:
            raise DataValidationError("no clips to train on")
        epoch, b = divmod(step, per_epoch)
        return self._collate(self.clip_index(epoch)[b * self.batch_size:(b + 1) * self.batch_size])

    def _collate(self, index: list[tuple[int, int]]) -> ClipBatch:
        return collate([make_clip(self.store.get(i), s, self.spec.length, self.image_size) for i, s in index])


def sample_clips(manifest: Manifest, spec: ClipSpec, seed: int = 0, *, split: str | None = None,
                 batch_size: int = 1, shuffle: bool = False, feature_dim: int | None = None,
                 image_size: int | None = None) -> Iterator[ClipBatch]:
    """One pass over every clip of ``split`` (all samples if None)."""
    store = SequenceStore(manifest, split, feature_dim)
    yield from ClipLoader(store, spec, batch_size, seed, shuffle, image_size).epoch(0)


def load_feature_sequences(manifest: Manifest, spec: ClipSpec, feature_dim: int, *, split: str | None = None,
                           batch_size: int = 1) -> Iterator[ClipBatch]:
    """Clip stream over pre-extracted feature files; zero-length files are skipped."""
    store = SequenceStore(manifest, split, feature_dim)
    keep = []
    for i, rec in enumerate(store.records):
        if rec.features is None:
            raise DataValidationError(f"{rec.id}: no feature file in manifest record")
        if len(store.get(i)) == 0:
            log.warning("feature file for %s is empty; skipped", rec.id)
            continue
        keep.append(rec)
    store.records = keep
    yield from ClipLoader(store, spec, batch_size, 0, shuffle=False).epoch(0)


def feature_tokens(features: Tensor) -> Tensor:
    """``B x T x F`` -> ``B x T x F x 1 x 1``: a single-level 1x1-grid token stream."""
    if features.dim() != 3:
        raise DimensionError(f"expected B x T x F features, got {tuple(features.shape)}")
    return features[..., None, None]
