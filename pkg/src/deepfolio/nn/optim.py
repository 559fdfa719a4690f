"""First-order optimizers over named parameter tensors."""
from __future__ import annotations

import numpy as np

from deepfolio.nn.tensor import Tensor, ShapeError


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


class Optimizer:
    kind = "base"

    def __init__(self, params: dict[str, Tensor], lr: float, clip_norm: float | None = 5.0):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = params
        self.lr = lr
        self.clip_norm = clip_norm
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _grads(self, grads: dict[str, np.ndarray] | None) -> dict[str, np.ndarray]:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        grads = dict(grads)
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ShapeError(f"gradient for {k} has shape {g.shape}, param {self.params[k].shape}")
        if self.clip_norm is not None:
            clip_global_norm(grads, self.clip_norm)
        return grads

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        grads = self._grads(grads)
        self.steps += 1
        for k, g in grads.items():
            p = self.params[k]
            p.data = p.data - self._delta(k, g)

    def _delta(self, key: str, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def _delta(self, key, g):
        return self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=5.0):
        super().__init__(params, lr, clip_norm)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def _delta(self, key, g):
        b1, b2 = self.beta1, self.beta2
        self.m[key] = b1 * self.m[key] + (1 - b1) * g
        self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
        m_hat = self.m[key] / (1 - b1 ** self.steps)
        v_hat = self.v[key] / (1 - b2 ** self.steps)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp(Optimizer):
    kind = "rmsprop"

    def __init__(self, params, lr, decay=0.9, eps=1e-8, clip_norm=5.0):
        super().__init__(params, lr, clip_norm)
        self.decay, self.eps = decay, eps
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def _delta(self, key, g):
        self.v[key] = self.decay * self.v[key] + (1 - self.decay) * g * g
        return self.lr * g / (np.sqrt(self.v[key]) + self.eps)


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float, **kw) -> Optimizer:
    table = {"sgd": SGD, "adam": Adam, "rmsprop": RMSProp}
    if kind not in table:
        raise ValueError(f"unknown optimizer {kind!r}")
    return table[kind](params, lr, **kw)
