"""Multi-scale 3D MLP-Mixer temporal aggregation for frame-level affect tasks."""

from affmixer.config import BackboneConfig, ClipSpec, MixerConfig, OptimConfig, RunConfig
from affmixer.metrics import MetricAccumulator, MetricReport
from affmixer.model import AffectModel, build_model

__version__ = "0.1.0"

__all__ = [
    "AffectModel",
    "BackboneConfig",
    "ClipSpec",
    "MetricAccumulator",
    "MetricReport",
    "MixerConfig",
    "OptimConfig",
    "RunConfig",
    "build_model",
]
