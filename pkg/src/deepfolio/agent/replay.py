"""Prioritized replay of single transitions, and a plain buffer of whole trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    state: object
    action: np.ndarray
    reward: float
    next_state: object
    expert: np.ndarray


class PrioritizedReplay:
    """Proportional prioritization over a FIFO ring of fixed capacity.

    At capacity 1000 a linear scan is cheaper than maintaining a sum tree.
    """

    def __init__(self, capacity: int = 1000, alpha: float = 0.6, eps: float = 1e-6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity, self.alpha, self.eps = capacity, alpha, eps
        self.items: list = []
        self.priorities = np.zeros(capacity)
        self.pos = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, item, priority: float | None = None) -> None:
        if priority is None:
            priority = self.priorities[:len(self)].max() if len(self) else 1.0
        if priority <= 0:
            raise ValueError("priorities must be positive")
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.pos] = item
        self.priorities[self.pos] = priority
        self.pos = (self.pos + 1) % self.capacity

    def probabilities(self) -> np.ndarray:
        p = self.priorities[:len(self)] ** self.alpha
        return p / p.sum()

    def sample(self, n: int, beta: float, rng: np.random.Generator):
        """Draw ``n`` indices with replacement; importance weights are max-normalized."""
        if not self.items:
            raise ValueError("cannot sample from an empty buffer")
        p = self.probabilities()
        idx = rng.choice(len(self), size=n, p=p)
        w = (len(self) * p[idx]) ** (-beta)
        w /= w.max()
        return idx, [self.items[i] for i in idx], w

    def update(self, idx, td_errors) -> None:
        self.priorities[np.asarray(idx)] = np.abs(np.asarray(td_errors, float)) + self.eps


def beta_schedule(step: int, total: int, beta0: float = 0.4) -> float:
    """Linear anneal from ``beta0`` to 1 over ``total`` steps."""
    if total <= 1:
        return 1.0
    return float(min(1.0, beta0 + (1.0 - beta0) * step / (total - 1)))


class TrajectoryBuffer:
    def __init__(self, capacity: int = 50):
        self.capacity = capacity
        self.trajectories: list[list[Transition]] = []

    def __len__(self) -> int:
        return len(self.trajectories)

    def add(self, trajectory: list[Transition]) -> None:
        if not trajectory:
            raise ValueError("empty trajectory")
        self.trajectories.append(list(trajectory))
        if len(self.trajectories) > self.capacity:
            self.trajectories.pop(0)

    def sample(self, k: int, rng: np.random.Generator) -> list[list[Transition]]:
        if not self.trajectories:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(len(self), size=min(k, len(self)), replace=False)
        return [self.trajectories[i] for i in idx]
