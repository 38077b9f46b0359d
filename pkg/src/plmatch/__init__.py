"""Partial-label learning through many-to-one probabilistic graph matching."""

from .dataset import CorruptionSpec, PartialLabelDataset, corrupt, load_dataset, load_glass, synth_clusters
from .affinity import AffinityMatrix, build_affinity, build_index, instance_similarity
from .matcher import Resolution, SolverConfig, solve
from .predictor import Prediction, TrainedModel, predict, train
from .evaluation import MethodConfig, cross_validate, paired_t_test, sweep

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "CorruptionSpec",
    "MethodConfig",
    "PartialLabelDataset",
    "Prediction",
    "Resolution",
    "SolverConfig",
    "TrainedModel",
    "build_affinity",
    "build_index",
    "corrupt",
    "cross_validate",
    "instance_similarity",
    "load_dataset",
    "load_glass",
    "paired_t_test",
    "predict",
    "solve",
    "sweep",
    "synth_clusters",
    "train",
]
