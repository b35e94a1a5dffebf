"""Joint acoustic scene classification and sound event detection toolkit."""

__version__ = "0.1.0"

from .features import FeatureClip, Waveform, extract_logmel
from .metrics import MetricReport, evaluate_model
from .model import GrlConfig, NetworkConfig, Predictions, build_network, insert_grl, train_step
from .nn.losses import LossWeights
from .training import ExperimentConfig, LabeledClip, run_training

__all__ = [
    "FeatureClip", "Waveform", "extract_logmel",
    "MetricReport", "evaluate_model",
    "GrlConfig", "NetworkConfig", "Predictions", "build_network", "insert_grl",
    "train_step", "LossWeights", "ExperimentConfig", "LabeledClip", "run_training",
]
