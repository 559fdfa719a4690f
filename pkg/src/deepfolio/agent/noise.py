"""Adaptive parameter-space noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ParamNoise:
    sigma: float = 0.01
    alpha: float = 1.01
    delta: float = 0.05

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")


def perturb(net, sigma: float, rng: np.random.Generator):
    """Copy of ``net`` with iid N(0, sigma^2) added to every parameter."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    twin = net.clone()
    for p in twin.parameters().values():
        p.data = p.data + rng.normal(0.0, sigma, size=p.shape)
    return twin


def copy_weights(dst, src, sigma: float = 0.0, rng: np.random.Generator | None = None) -> None:
    """Overwrite ``dst`` with ``src`` (plus optional noise) in place, keeping array identity out of it."""
    for k, p in dst.parameters().items():
        v = src.parameters()[k].data
        p.data = v + rng.normal(0.0, sigma, size=v.shape) if sigma > 0 else v.copy()


def action_distance(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def noise_distance(actor, perturbed, states) -> float:
    """Root mean squared difference of the two actors' actions over a batch of states."""
    return action_distance(actor.act(states), perturbed.act(states))


def adapt_sigma(noise: ParamNoise, d: float) -> float:
    noise.sigma = noise.sigma * noise.alpha if d <= noise.delta else noise.sigma / noise.alpha
    return noise.sigma
