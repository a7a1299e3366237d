"""Collaborative subspace clustering.

A self-expressive affinity learner and a classifier head supervise each
other through confidence-masked losses, trained batch by batch; cluster
labels come straight from the classifier at inference time, with no
spectral step.
"""

from . import autodiff
from .affinity import (class_affinity, kmeans, ridge_self_expression, spectral_cluster,
                       subspace_affinity)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config_file, parse_config_text, config_to_text
from .data import Dataset, SyntheticSpec, generate_synthetic, load_idx, subset
from .losses import (ConfidenceMasks, LossBreakdown, build_masks, collaboration_rate,
                     negative_loss, positive_loss, subspace_loss, total_loss)
from .metrics import accuracy, ari, hungarian, infer_labels, nmi
from .network import ConfigError, LayerSpec, Network, NetworkConfig, SelfExpressiveLayer
from .optim import Adam, AdamState
from .trainer import CollaborativeTrainer, TrainResult, TrainingDivergedError, evaluate, fit, predict

__all__ = [
    "Adam", "AdamState", "CollaborativeTrainer", "ConfidenceMasks", "ConfigError",
    "Dataset", "ExperimentConfig", "LayerSpec", "LossBreakdown", "Network",
    "NetworkConfig", "SelfExpressiveLayer", "SyntheticSpec", "TrainResult",
    "TrainingDivergedError", "accuracy", "ari", "autodiff", "build_masks",
    "class_affinity", "collaboration_rate", "config_to_text", "evaluate", "fit",
    "generate_synthetic", "hungarian", "infer_labels", "kmeans", "load_checkpoint",
    "load_idx", "negative_loss", "nmi", "parse_config_file", "parse_config_text",
    "positive_loss", "predict", "ridge_self_expression", "save_checkpoint",
    "spectral_cluster", "subset", "subspace_affinity", "subspace_loss", "total_loss",
]
