"""Predictive uncertainty for models deployed under covariate shift.

The package trains an amortized variational posterior against an adaptive,
covariate-conditioned prior, with synthetic bootstrap environments supplying
a cross-environment variance penalty.  `fit` and `predict` are the main entry
points; `stages` wires them into a reproducible artifact pipeline, and
`service`/`cli` expose that pipeline over HTTP and the command line.
"""

from .config import ExperimentConfig, config_hash, load_config
from .data import (
    gen_hetero_linear,
    gen_logistic_gap,
    kmeans_shift_split,
    load_csv,
    standardize,
)
from .environments import FitResult, Prediction, TrainConfig, TrainingDiverged, fit, predict
from .model import Dataset, EmbeddingModel, pretrain_embedding
from .prior import PriorConfig, default_prior_config
from .rngs import SeedTree

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EmbeddingModel",
    "ExperimentConfig",
    "FitResult",
    "Prediction",
    "PriorConfig",
    "SeedTree",
    "TrainConfig",
    "TrainingDiverged",
    "config_hash",
    "default_prior_config",
    "fit",
    "gen_hetero_linear",
    "gen_logistic_gap",
    "kmeans_shift_split",
    "load_csv",
    "predict",
    "pretrain_embedding",
    "standardize",
    "__version__",
]
