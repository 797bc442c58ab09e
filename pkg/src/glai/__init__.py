"""Split a ReLU network into structural and quantitative knowledge.

The activation patterns of a trained *selector* network are frozen per
sample; the remaining quantitative knowledge is re-trained either as a
masked copy of the network or as a linear model over path weights, which
can be solved directly and merged by averaging.
"""

from .core_nn import Network, NetworkSpec, forward, init_network, train_epochs
from .data_io import Dataset, load_csv, load_idx, save_csv, split, synth_clusters
from .errors import GlaiError
from .linear_estimator import (
    TrainerConfig,
    estimator_direct_solve,
    estimator_sgd_train,
    federated_round,
    incremental_retrain,
    merge_estimators,
)
from .path_algebra import LinearEstimator, PathId, enumerate_paths, init_estimator_from_network
from .path_selector import ActivationPattern, PatternSet, capture_patterns, extend_patterns
from .poc_estimator import masked_forward, retrain_quantitative

__version__ = "0.1.0"

__all__ = [
    "ActivationPattern",
    "Dataset",
    "GlaiError",
    "LinearEstimator",
    "Network",
    "NetworkSpec",
    "PathId",
    "PatternSet",
    "TrainerConfig",
    "capture_patterns",
    "enumerate_paths",
    "estimator_direct_solve",
    "estimator_sgd_train",
    "extend_patterns",
    "federated_round",
    "forward",
    "incremental_retrain",
    "init_estimator_from_network",
    "init_network",
    "load_csv",
    "load_idx",
    "masked_forward",
    "merge_estimators",
    "retrain_quantitative",
    "save_csv",
    "split",
    "synth_clusters",
    "train_epochs",
]
