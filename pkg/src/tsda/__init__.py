"""Time-series domain adaptation with time-frequency features, entropic OT
alignment and align-then-correct detection of target-private classes."""

__version__ = "0.1.0"

from .data import Dataset, SyntheticSpec, generate, load, save
from .evaluation import MetricsReport, evaluate
from .model import ModelConfig, TimeFrequencyModel
from .pipeline import AdaptationResult, TrainConfig, adapt

__all__ = [
    "AdaptationResult",
    "Dataset",
    "MetricsReport",
    "ModelConfig",
    "SyntheticSpec",
    "TimeFrequencyModel",
    "TrainConfig",
    "adapt",
    "evaluate",
    "generate",
    "load",
    "save",
]
