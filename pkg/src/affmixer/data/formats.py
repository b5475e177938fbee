"""On-disk formats: manifest (JSON lines), per-frame annotation CSVs, feature arrays.

Manifest
    First line ``{"format": "affmixer-manifest", "version": 1}``, then one JSON
    object per sample::

        {"id": "s000", "split": "train", "fps": 30.0,
         "frames": "s000/frames",            # directory of per-frame PNGs, or null
         "features": null,                   # .npy of shape frames x dim, or null
         "annotations": {"au": "s000/au.csv", "va": ..., "ah": ..., "emi": ...},
         "sentinels": {"au": -1}}            # optional per-task override

    Relative paths resolve against the manifest's directory.

Annotation CSV
    Line 1 is ``#affmixer-annotation v1 task=<au|va|ah|emi> sentinel=<value>``
    (EMI adds ``scale=<max rating>``), line 2 is a column header, then one row
    per frame (12 columns for AU, 2 for VA, 1 for AH) or a single row of six
    ratings for EMI.  Entries equal to the sentinel become invalid.  Default
    sentinels: AU -1, VA -5, AH -1, EMI -1.

Features
    NumPy ``.npy`` (magic string + version + shape header), 2-D float array.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from affmixer.errors import DataValidationError, DimensionError

log = logging.getLogger(__name__)

MANIFEST_MAGIC = "affmixer-manifest"
ANNOTATION_MAGIC = "#affmixer-annotation"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
TASK_COLUMNS = {"au": 12, "va": 2, "ah": 1, "emi": 6}
DEFAULT_SENTINELS = {"au": -1.0, "va": -5.0, "ah": -1.0, "emi": -1.0}


@dataclass
class SampleRecord:
    id: str
    split: str
    fps: float = 30.0
    frames: str | None = None
    features: str | None = None
    annotations: dict[str, str] = field(default_factory=dict)
    sentinels: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "split": self.split,
            "fps": self.fps,
            "frames": self.frames,
            "features": self.features,
            "annotations": dict(self.annotations),
        }
        if self.sentinels:
            out["sentinels"] = dict(self.sentinels)
        return out


@dataclass
class Manifest:
    records: list[SampleRecord]
    root: Path = Path(".")

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def __len__(self) -> int:
        return len(self.records)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    lines = [json.dumps({"format": MANIFEST_MAGIC, "version": FORMAT_VERSION})]
    lines += [json.dumps(r.to_json(), sort_keys=True) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"manifest not found: {path}")
    text = path.read_text()
    manifest = Manifest([], path.parent)
    if not text.strip():
        log.warning("manifest %s is empty", path)
        return manifest
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}:1: bad header: {exc}") from exc
    if header.get("format") != MANIFEST_MAGIC or header.get("version") != FORMAT_VERSION:
        raise DataValidationError(f"{path}:1: expected {MANIFEST_MAGIC} version {FORMAT_VERSION}, got {header}")
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            rec = SampleRecord(
                id=str(raw["id"]),
                split=raw["split"],
                fps=float(raw.get("fps", 30.0)),
                frames=raw.get("frames"),
                features=raw.get("features"),
                annotations=dict(raw.get("annotations") or {}),
                sentinels={k: float(v) for k, v in (raw.get("sentinels") or {}).items()},
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataValidationError(f"{path}:{lineno}: cannot parse record: {exc}") from exc
        if rec.split not in SPLITS:
            raise DataValidationError(f"{path}:{lineno}: unknown split {rec.split!r}")
        if rec.id in seen:
            raise DataValidationError(f"{path}:{lineno}: duplicate sample id {rec.id!r}")
        if (rec.frames is None) == (rec.features is None):
            raise DataValidationError(f"{path}:{lineno}: exactly one of 'frames' / 'features' must be set")
        unknown = set(rec.annotations) - set(TASK_COLUMNS)
        if unknown:
            raise DataValidationError(f"{path}:{lineno}: unknown annotation tasks {sorted(unknown)}")
        seen.add(rec.id)
        manifest.records.append(rec)
    if check_paths:
        missing = []
        for rec in manifest.records:
            refs = [rec.frames or rec.features, *rec.annotations.values()]
            missing += [str(manifest.resolve(r)) for r in refs if not manifest.resolve(r).exists()]
        if missing:
            raise DataValidationError("missing paths: " + ", ".join(missing))
    return manifest


def _parse_header(line: str, path: Path) -> dict[str, str]:
    parts = line.strip().split()
    if not parts or parts[0] != ANNOTATION_MAGIC or len(parts) < 2 or parts[1] != f"v{FORMAT_VERSION}":
        raise DataValidationError(f"{path}:1: expected '{ANNOTATION_MAGIC} v{FORMAT_VERSION} ...'")
    meta = {}
    for kv in parts[2:]:
        k, _, v = kv.partition("=")
        meta[k] = v
    return meta


def read_annotation(path: str | Path, task: str, sentinel: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values, valid)`` arrays of shape (frames, columns); EMI returns (6,) and is scaled to [0, 1]."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise DataValidationError(f"{path}: empty annotation file")
    meta = _parse_header(lines[0], path)
    if meta.get("task") != task:
        raise DataValidationError(f"{path}:1: annotation is for task {meta.get('task')!r}, expected {task!r}")
    if sentinel is None:
        sentinel = float(meta.get("sentinel", DEFAULT_SENTINELS[task]))
    ncol = TASK_COLUMNS[task]
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != ncol:
            raise DataValidationError(f"{path}:{lineno}: expected {ncol} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: {exc}") from exc
    values = np.asarray(rows, dtype=np.float64).reshape(-1, ncol)
    valid = values != sentinel
    values = np.where(valid, values, 0.0)
    if task == "emi":
        if len(values) != 1:
            raise DataValidationError(f"{path}: EMI annotation must have exactly one row")
        scale = float(meta.get("scale", 100))
        return values[0] / scale, valid[0]
    return values, valid


def write_annotation(path: str | Path, task: str, values: np.ndarray, valid: np.ndarray | None = None,
                     sentinel: float | None = None, scale: float = 100.0) -> None:
    from affmixer.heads import AU_NAMES, EMI_NAMES

    sentinel = DEFAULT_SENTINELS[task] if sentinel is None else sentinel
    header = f"{ANNOTATION_MAGIC} v{FORMAT_VERSION} task={task} sentinel={sentinel:g}"
    cols = {"au": AU_NAMES, "va": ("valence", "arousal"), "ah": ("label",), "emi": EMI_NAMES}[task]
    values = np.asarray(values, dtype=np.float64).reshape(-1, TASK_COLUMNS[task])
    if task == "emi":
        header += f" scale={scale:g}"
        values = values * scale
    if valid is not None:
        values = np.where(np.asarray(valid).reshape(values.shape), values, sentinel)
    fmt = (lambda v: f"{int(v)}") if task in ("au", "ah") else (lambda v: repr(float(v)))
    body = "\n".join(",".join(fmt(v) for v in row) for row in values)
    Path(path).write_text(f"{header}\n{','.join(cols)}\n{body}\n")


def read_features(path: str | Path, expected_dim: int | None = None) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2:
        raise DimensionError(f"{path}: feature array must be 2-D (frames x dim), got shape {arr.shape}")
    if expected_dim is not None and arr.shape[0] and arr.shape[1] != expected_dim:
        raise DimensionError(f"{path}: feature dim {arr.shape[1]} != configured adapter input {expected_dim}")
    return arr.astype(np.float32, copy=False)


def write_features(path: str | Path, feats: np.ndarray) -> None:
    np.save(path, np.asarray(feats, dtype=np.float32), allow_pickle=False)
