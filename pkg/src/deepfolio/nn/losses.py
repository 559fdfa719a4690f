"""Loss functions, both as graph ops and as plain (value, gradient) pairs."""
from __future__ import annotations

import numpy as np

from deepfolio.nn import tensor as T
from deepfolio.nn.tensor import Tensor, ShapeError

PROB_FLOOR = 1e-7


def _same_shape(a, b) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def mse(pred: Tensor, target, weights=None) -> Tensor:
    target = T.as_tensor(target)
    _same_shape(pred.data, target.data)
    err = T.square(pred - target)
    if weights is not None:
        err = err * np.asarray(weights, dtype=np.float64).reshape(err.shape)
    return err.mean()


def binary_log_loss(pred: Tensor, target) -> Tensor:
    """-mean[t log p + (1-t) log(1-p)] with p clamped to [1e-7, 1-1e-7]."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    _same_shape(pred.data, target)
    p = T.clip(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = target * T.log(p) + (1.0 - target) * T.log(1.0 - p)
    return -ll.mean()


def mse_value(pred, target) -> tuple[float, np.ndarray]:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    _same_shape(pred, target)
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def binary_log_loss_value(pred, target) -> tuple[float, np.ndarray]:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    _same_shape(pred, target)
    inside = (pred >= PROB_FLOOR) & (pred <= 1.0 - PROB_FLOOR)
    p = np.clip(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)
    value = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
    grad = -(target / p - (1 - target) / (1 - p)) / p.size
    return float(value), np.where(inside, grad, 0.0)


def losses(kind: str, prediction, target) -> tuple[float, np.ndarray]:
    if kind == "mse":
        return mse_value(prediction, target)
    if kind == "binary_log_loss":
        return binary_log_loss_value(prediction, target)
    raise ValueError(f"unknown loss {kind!r}")
