"""Audio-visual acoustic event classification over heterogeneous graphs."""

from .graph import EdgeRule, EdgeRules, HeteroGraph, build_hetero_graph
from .layers import HgnnModel, ModelConfig
from .metrics import EvalResult, average_precision, evaluate, roc_auc
from .tensor import ComputeGraph, Rng, Tensor, xavier_init
from .training import TrainConfig, focal_loss, lr_at, run_seeds, train

__all__ = [
    "ComputeGraph", "EdgeRule", "EdgeRules", "EvalResult", "HeteroGraph",
    "HgnnModel", "ModelConfig", "Rng", "Tensor", "TrainConfig",
    "average_precision", "build_hetero_graph", "evaluate", "focal_loss",
    "lr_at", "run_seeds", "train", "xavier_init",
]

__version__ = "0.1.0"
