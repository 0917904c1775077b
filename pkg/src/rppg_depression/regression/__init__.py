from .evaluation import EvalReport, evaluate, fuse_post, fuse_pre, read_predictions, write_predictions
from .forest import ForestConfig, train_rf
from .mlp import MlpConfig, train_mlp
from .model import TrainedModel, predict

__all__ = [
    "EvalReport", "ForestConfig", "MlpConfig", "TrainedModel", "evaluate", "fuse_post", "fuse_pre",
    "predict", "read_predictions", "train_mlp", "train_rf", "write_predictions",
]
