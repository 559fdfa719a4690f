"""Actor and critic networks over the IPM-augmented state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deepfolio.nn import tensor as T
from deepfolio.nn.layers import Module, Dense, Activation, Dropout, BiLSTM
from deepfolio.nn.tensor import Tensor

# Inputs live on very different scales (price ratios near 1, percentage changes
# near 1e-2). These put them all near unit size before the first layer.
PRICE_SCALE = 10.0
PRED_SCALE = 100.0
INDEX_SCALE = 100.0


@dataclass
class AugmentedState:
    price: np.ndarray    # (3, m+1, k2) normalized close/high/low windows
    w_prev: np.ndarray   # (m+1,)
    pred: np.ndarray     # (3m,) predicted close/high/low changes for the next bar
    index: float         # market index close ratio

    def __post_init__(self):
        if self.index <= 0:
            raise ValueError("index ratio must be positive")


@dataclass
class StateBatch:
    price: np.ndarray    # (B, 3, m+1, k2)
    w_prev: np.ndarray   # (B, m+1)
    pred: np.ndarray     # (B, 3m)
    index: np.ndarray    # (B,)

    def __len__(self) -> int:
        return len(self.w_prev)

    def take(self, idx) -> "StateBatch":
        return StateBatch(self.price[idx], self.w_prev[idx], self.pred[idx], self.index[idx])


def stack_states(states: list[AugmentedState]) -> StateBatch:
    return StateBatch(np.stack([s.price for s in states]), np.stack([s.w_prev for s in states]),
                      np.stack([s.pred for s in states]), np.array([s.index for s in states], float))


def fe_sequence(price: np.ndarray) -> np.ndarray:
    """(B, 3, m+1, k2) -> (B, k2, 3(m+1)): channel-major rows, one LSTM step per bar."""
    B, C, A, k2 = price.shape
    flat = price.reshape(B, C * A, k2)
    return np.ascontiguousarray(np.swapaxes(flat, 1, 2)) * PRICE_SCALE - PRICE_SCALE


def side_inputs(batch: StateBatch) -> np.ndarray:
    return np.concatenate([batch.w_prev, batch.pred * PRED_SCALE,
                           np.log(batch.index)[:, None] * INDEX_SCALE], axis=1)


class FeatureExtractor(Module):
    """Two stacked bidirectional LSTMs; keeps the last forward and first backward state."""

    def __init__(self, n_features: int, sizes: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        self.layers = []
        n = n_features
        for i, h in enumerate(sizes):
            self.layers.append(self.add_module(f"bi{i}", BiLSTM(n, h, rng)))
            n = 2 * h
        self.out_dim = n

    def forward(self, seq: Tensor) -> Tensor:
        x = seq
        for layer in self.layers[:-1]:
            x = layer(x)
        last = self.layers[-1]
        return T.concat([last.fwd(x)[:, -1, :], last.bwd(x)[:, 0, :]], axis=-1)


class _Trunk(Module):
    def __init__(self, n_in: int, fa_sizes: tuple[int, ...], keep: float, rng: np.random.Generator,
                 slope: float = 0.01):
        super().__init__()
        self.dense = []
        n = n_in
        for i, h in enumerate(fa_sizes):
            # He-uniform: keeps activation scale through the leaky-relu stack
            self.dense.append(self.add_module(f"fa{i}", Dense(n, h, rng, gain=np.sqrt(6.0))))
            n = h
        self.act = Activation("leaky_relu", slope)
        self.drop = Dropout(keep)
        self.out_dim = n

    def forward(self, x: Tensor, rng=None, train: bool = False) -> Tensor:
        for d in self.dense:
            x = self.drop(self.act(d(x)), rng, train)
        return x


class Actor(Module):
    def __init__(self, m: int, k2: int, rng: np.random.Generator, fe_sizes=(20, 8),
                 fa_sizes=(256, 128, 64, 32), keep: float = 0.5):
        super().__init__()
        self.m, self.k2 = m, k2
        self.fe = self.add_module("fe", FeatureExtractor(3 * (m + 1), fe_sizes, rng))
        side = (m + 1) + 3 * m + 1
        self.trunk = self.add_module("fa", _Trunk(self.fe.out_dim + side, fa_sizes, keep, rng))
        self.head = self.add_module("head", Dense(self.trunk.out_dim, m + 1, rng))

    def forward(self, batch: StateBatch, rng=None, train: bool = False) -> Tensor:
        feats = self.fe(Tensor(fe_sequence(batch.price)))
        x = T.concat([feats, Tensor(side_inputs(batch))], axis=-1)
        return T.softmax(self.head(self.trunk(x, rng, train)), axis=-1)

    def act(self, batch: StateBatch) -> np.ndarray:
        return self.forward(batch).data


class Critic(Module):
    """Q(s, a); the action joins the side inputs at the first dense layer."""

    def __init__(self, m: int, k2: int, rng: np.random.Generator, fe_sizes=(20, 8),
                 fa_sizes=(256, 128, 64, 32), keep: float = 0.5):
        super().__init__()
        self.m, self.k2 = m, k2
        self.fe = self.add_module("fe", FeatureExtractor(3 * (m + 1), fe_sizes, rng))
        side = (m + 1) + 3 * m + 1 + (m + 1)
        self.trunk = self.add_module("fa", _Trunk(self.fe.out_dim + side, fa_sizes, keep, rng))
        self.head = self.add_module("head", Dense(self.trunk.out_dim, 1, rng))

    def forward(self, batch: StateBatch, action, rng=None, train: bool = False) -> Tensor:
        feats = self.fe(Tensor(fe_sequence(batch.price)))
        a = action if isinstance(action, Tensor) else Tensor(np.asarray(action, float))
        # centred and stretched so departures from uniform weights are order one
        a = a * float(self.m + 1) - 1.0
        x = T.concat([feats, Tensor(side_inputs(batch)), a], axis=-1)
        return self.head(self.trunk(x, rng, train)).reshape(-1)
