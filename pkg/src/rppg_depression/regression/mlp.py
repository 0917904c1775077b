"""Multilayer perceptron regressor trained with mini-batch Adam."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..errors import DivergedTraining
from .model import TrainedModel, check_training_data


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple = (128, 64, 32)
    learning_rate: float = 0.01
    batch_size: int = 140
    max_epochs: int = 200
    tol: float = 1e-4
    patience: int = 10
    alpha: float = 1e-4  # L2 penalty
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if len(self.hidden_sizes) != 3 or min(self.hidden_sizes) < 1:
            raise ValueError("exactly three positive hidden layer sizes are required")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


def _init_params(sizes, rng) -> list:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, fan_out))
    return params


def _forward(params, Z):
    acts = [Z]
    h = Z
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _loss_and_grads(params, Z, y, alpha):
    acts = _forward(params, Z)
    out = acts[-1][:, 0]
    b = len(y)
    err = out - y
    weights = params[0::2]
    loss = 0.5 * np.mean(err ** 2) + 0.5 * alpha * sum(np.sum(w * w) for w in weights) / b
    grads = [None] * len(params)
    delta = (err / b)[:, None]
    for i in range(len(params) // 2 - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta + alpha * params[2 * i] / b
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return loss, grads


def _standardize(X, mean, scale):
    return (X - mean) / scale


def train_mlp(X, y, cfg: MlpConfig = MlpConfig(), registry_hash: str = "",
              X_val: Optional[np.ndarray] = None, y_val: Optional[np.ndarray] = None) -> TrainedModel:
    """Fit on z-scored features.

    Without validation data, training stops once the epoch loss fails to
    improve by ``tol`` for ``patience`` consecutive epochs. With validation
    data the same rule runs on validation MSE and the best weights are kept.
    """
    X, y = check_training_data(X, y)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = _standardize(X, mean, scale)
    use_val = X_val is not None and y_val is not None and len(y_val) > 0
    if use_val:
        Zv = _standardize(np.asarray(X_val, dtype=float), mean, scale)
        yv = np.asarray(y_val, dtype=float).ravel()

    rng = np.random.default_rng(cfg.seed)
    sizes = (X.shape[1],) + cfg.hidden_sizes + (1,)
    params = _init_params(sizes, rng)
    # zero output layer: training starts from the target mean
    params[-2] = np.zeros_like(params[-2])
    params[-1] = np.full(1, y.mean())
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    n = len(y)
    best, stall = np.inf, 0
    best_params = None
    losses, val_losses = [], []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads(params, Z[idx], y[idx], cfg.alpha)
            if not np.isfinite(loss):
                raise DivergedTraining(f"loss became non-finite at epoch {epoch}")
            epoch_loss += loss * len(idx)
            step += 1
            lr = cfg.learning_rate * np.sqrt(1 - cfg.beta2 ** step) / (1 - cfg.beta1 ** step)
            for i, g in enumerate(grads):
                m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g
                v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g
                params[i] = params[i] - lr * m[i] / (np.sqrt(v[i]) + cfg.epsilon)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise DivergedTraining(f"loss became non-finite at epoch {epoch}")
        losses.append(float(epoch_loss))
        if use_val:
            pred = _forward(params, Zv)[-1][:, 0]
            monitored = float(np.mean((pred - yv) ** 2))
            val_losses.append(monitored)
        else:
            monitored = epoch_loss
        if monitored > best - cfg.tol:
            stall += 1
        else:
            stall = 0
        if monitored < best:
            best = monitored
            if use_val:
                best_params = [p.copy() for p in params]
        if stall >= cfg.patience:
            break
    if best_params is not None:
        params = best_params
    packed = {"x_mean": mean, "x_scale": scale}
    for i in range(len(params) // 2):
        packed[f"W{i}"] = params[2 * i]
        packed[f"b{i}"] = params[2 * i + 1]
    meta = {"seed": cfg.seed, "n_train_rows": n, "epochs": len(losses), "loss_trace": losses,
            "standardized_inputs": True, "early_stopping_on_dev": bool(use_val)}
    if use_val:
        meta["dev_loss_trace"] = val_losses
    cfg_d = asdict(cfg)
    cfg_d["hidden_sizes"] = list(cfg.hidden_sizes)
    return TrainedModel("mlp", cfg_d, registry_hash, X.shape[1], packed, meta)


def mlp_predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    p = model.params
    n_layers = sum(1 for k in p if k.startswith("W"))
    params = []
    for i in range(n_layers):
        params.extend([p[f"W{i}"], p[f"b{i}"]])
    Z = _standardize(X, p["x_mean"], p["x_scale"])
    return _forward(params, Z)[-1][:, 0].copy()
