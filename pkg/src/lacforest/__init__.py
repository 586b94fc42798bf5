"""Random forests that learn with an augmented (unseen) class under class shift.

Modules
-------
dataset   CSV ingestion, normalisation, synthetic data, class-shift splits
impurity  augmented Gini impurity and constrained split search
forest    two-step tree ensemble (exploration, pseudo-labelling, refinement)
neural    soft-routing neural variant with analytic gradients
metrics   accuracy, macro-F1 and augmented-class detection AUC
oracle    brute-force and Monte-Carlo reference computations
cli       command-line entry point
"""

from .dataset import (
    DataError,
    LabeledSet,
    ShiftSplitConfig,
    SyntheticSpec,
    UnlabeledSet,
    benchmark_split,
    generate_synthetic,
    load_csv,
    make_shift_split,
    normalize_unit_interval,
)
from .forest import LACForestModel, train_gini_forest, train_lacforest
from .impurity import NodeStats, augmented_gini, best_split, split_reduction, vartheta_vector
from .metrics import UndefinedMetric, accuracy, detection_auc, evaluate, macro_f1
from .neural import EncoderConfig, NeuralForestModel, TrainConfig, train_neural

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EncoderConfig",
    "LACForestModel",
    "LabeledSet",
    "NeuralForestModel",
    "NodeStats",
    "ShiftSplitConfig",
    "SyntheticSpec",
    "TrainConfig",
    "UndefinedMetric",
    "UnlabeledSet",
    "accuracy",
    "augmented_gini",
    "benchmark_split",
    "best_split",
    "detection_auc",
    "evaluate",
    "generate_synthetic",
    "load_csv",
    "macro_f1",
    "make_shift_split",
    "normalize_unit_interval",
    "split_reduction",
    "train_gini_forest",
    "train_lacforest",
    "train_neural",
    "vartheta_vector",
]
