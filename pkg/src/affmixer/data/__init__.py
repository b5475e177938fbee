"""Dataset manifests, annotation ingestion, clip batching and synthetic data."""

from affmixer.data.clips import (
    ClipBatch,
    ClipLoader,
    SequenceStore,
    clip_windows,
    feature_tokens,
    load_feature_sequences,
    sample_clips,
)
from affmixer.data.formats import Manifest, SampleRecord, load_manifest, save_manifest
from affmixer.data.synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "ClipBatch",
    "ClipLoader",
    "Manifest",
    "SampleRecord",
    "SequenceStore",
    "SyntheticSpec",
    "clip_windows",
    "feature_tokens",
    "generate_synthetic",
    "load_feature_sequences",
    "load_manifest",
    "sample_clips",
    "save_manifest",
]
