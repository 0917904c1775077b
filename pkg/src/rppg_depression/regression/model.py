from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyTrainingSet, NonFiniteInput, RegistryMismatch, ShapeMismatch


@dataclass(eq=False)
class TrainedModel:
    model_type: str
    config: dict
    registry_hash: str
    n_features: int
    params: dict
    meta: dict = field(default_factory=dict)


def check_training_data(X, y) -> tuple:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ShapeMismatch("X must be a 2-D feature matrix")
    if X.shape[0] != len(y):
        raise ShapeMismatch(f"X has {X.shape[0]} rows but y has {len(y)}")
    if len(y) < 2:
        raise EmptyTrainingSet(f"need at least two training rows, got {len(y)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("training data contains non-finite values")
    return X, y


def predict(model: TrainedModel, X, registry_hash: str | None = None) -> np.ndarray:
    """One finite prediction per row of ``X``.

    When ``registry_hash`` is given it must match the hash the model was
    trained against.
    """
    from .forest import forest_predict
    from .mlp import mlp_predict

    if registry_hash is not None and registry_hash != model.registry_hash:
        raise RegistryMismatch(f"features use registry {registry_hash}, model expects {model.registry_hash}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("feature matrix contains non-finite values")
    if model.model_type == "rf":
        return forest_predict(model, X)
    if model.model_type == "mlp":
        return mlp_predict(model, X)
    raise ValueError(f"unknown model type {model.model_type!r}")
