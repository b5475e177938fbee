"""Training, evaluation, gradient checking, benchmarking and ablations."""

from affmixer.engine.ablation import run_ablation
from affmixer.engine.bench import benchmark
from affmixer.engine.checkpoint import load_checkpoint, save_checkpoint
from affmixer.engine.evaluate import evaluate, evaluate_model, evaluate_predictions
from affmixer.engine.gradcheck import gradcheck, gradcheck_config
from affmixer.engine.train import train

__all__ = [
    "benchmark",
    "evaluate",
    "evaluate_model",
    "evaluate_predictions",
    "gradcheck",
    "gradcheck_config",
    "load_checkpoint",
    "run_ablation",
    "save_checkpoint",
    "train",
]
