"""Layers built on the autodiff tensor: dense, LSTM (cell, sequence, bidirectional), dropout."""
from __future__ import annotations

import copy

import numpy as np

from deepfolio.nn import tensor as T
from deepfolio.nn.tensor import Tensor, ShapeError, _check_finite, _sigmoid


class Module:
    """Base class: holds named parameters and sub-modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        p = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.parameters(f"{prefix}{cname}."))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise KeyError(f"parameter names differ: {sorted(set(params) ^ set(state))}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {v.shape}")
            p.data = v.copy()

    def clone(self) -> "Module":
        twin = copy.deepcopy(self)
        twin.zero_grad()
        return twin

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.W = self.add_param("W", gain * _uniform(rng, n_in, (n_in, n_out)))
        self.b = self.add_param("b", np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        return x @ self.W + self.b


class Activation(Module):
    KINDS = ("tanh", "sigmoid", "leaky_relu", "softmax")

    def __init__(self, kind: str, slope: float = 0.01):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.slope = kind, slope

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "leaky_relu":
            return T.leaky_relu(x, self.slope)
        return getattr(T, self.kind)(x)


class Dropout(Module):
    """Inverted dropout; identity in eval mode or when ``keep == 1``."""

    def __init__(self, keep: float):
        super().__init__()
        if not 0.0 < keep <= 1.0:
            raise ValueError("keep probability must lie in (0, 1]")
        self.keep = keep

    def forward(self, x: Tensor, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
        if not train or self.keep == 1.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an explicit rng")
        mask = (rng.random(x.shape) < self.keep) / self.keep
        return x * mask


def _lstm_init(module: Module, n_in: int, hidden: int, rng: np.random.Generator) -> None:
    module.Wx = module.add_param("Wx", _uniform(rng, n_in, (n_in, 4 * hidden)))
    module.Wh = module.add_param("Wh", _uniform(rng, hidden, (hidden, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    module.b = module.add_param("b", b)


class LSTMCell(Module):
    """Single LSTM step composed from primitive ops. Gate order: input, forget, cell, output."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        _lstm_init(self, n_in, hidden, rng)

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden
        z = x @ self.Wx + h @ self.Wh + self.b
        i = T.sigmoid(z[..., :H])
        f = T.sigmoid(z[..., H:2 * H])
        g = T.tanh(z[..., 2 * H:3 * H])
        o = T.sigmoid(z[..., 3 * H:])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new


def lstm_sequence(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x`` of shape (batch, time, features) from zero state.

    Returns hidden states of shape (batch, time, hidden), in input time order
    even when ``reverse`` is set. Forward and backward-through-time are fused
    into one graph node. Memory traffic dominates at these sizes, so each step
    works on one stacked ``[x_t, h_{t-1}, 1]`` row block and one weight matrix.
    """
    X = x.data
    if X.ndim != 3 or X.shape[2] != Wx.shape[0]:
        raise ShapeError(f"lstm input {X.shape} does not match weights {Wx.shape}")
    B, steps, n_in = X.shape
    H = Wh.shape[0]
    W = np.vstack([Wx.data, Wh.data, b.data[None, :]])
    # Every gate goes through a single tanh: sigmoid(z) = (1 + tanh(z / 2)) / 2.
    half = np.full(4 * H, 0.5)
    half[2 * H:3 * H] = 1.0
    offset = np.full(4 * H, 0.5)
    offset[2 * H:3 * H] = 0.0
    W_half = W * half
    # time-major, in processing order, so step n always follows step n-1
    Xs = np.swapaxes(X, 0, 1)
    if reverse:
        Xs = Xs[::-1]
    XH = np.empty((steps, B, n_in + H + 1))
    XH[:, :, :n_in] = Xs
    XH[0, :, n_in:n_in + H] = 0.0
    XH[:, :, -1] = 1.0
    acts = np.empty((steps, B, 4 * H))  # gates i, f, g, o after their nonlinearity
    cs = np.empty((steps + 1, B, H))   # cs[n] is the cell state before step n
    tcs = np.empty((steps, B, H))
    hs = np.empty((steps, B, H))
    cs[0] = 0.0
    tmp = np.empty((B, H))
    for n in range(steps):
        a = acts[n]
        np.matmul(XH[n], W_half, out=a)
        np.tanh(a, out=a)
        a *= half
        a += offset
        np.multiply(a[:, H:2 * H], cs[n], out=cs[n + 1])
        np.multiply(a[:, :H], a[:, 2 * H:3 * H], out=tmp)
        cs[n + 1] += tmp
        np.tanh(cs[n + 1], out=tcs[n])
        np.multiply(a[:, 3 * H:], tcs[n], out=hs[n])
        if n + 1 < steps:
            XH[n + 1, :, n_in:n_in + H] = hs[n]
    # a NaN anywhere runs through the recurrence into the last state
    _check_finite(hs[-1], "lstm")

    def to_batch(a):
        a = a[::-1] if reverse else a
        return np.ascontiguousarray(np.swapaxes(a, 0, 1))

    out = to_batch(hs)

    def back(gout):
        G = np.swapaxes(gout, 0, 1)
        if reverse:
            G = G[::-1]
        G = np.ascontiguousarray(G)
        dW = np.zeros_like(W)
        dX = np.empty((steps, B, n_in))
        WT = np.ascontiguousarray(W.T)
        dz = np.empty((B, 4 * H))
        der = np.empty((B, 4 * H))
        dxh = np.empty((B, n_in + H + 1))
        dh = np.empty((B, H))
        dc = np.zeros((B, H))
        buf = np.empty((B, H))
        dh_next = np.zeros((B, H))
        for n in range(steps - 1, -1, -1):
            a = acts[n]
            tc = tcs[n]
            np.add(G[n], dh_next, out=dh)
            if n < steps - 1:
                dc *= acts[n + 1][:, H:2 * H]
            # dc += dh * o * (1 - tc^2)
            np.multiply(tc, tc, out=buf)
            np.subtract(1.0, buf, out=buf)
            buf *= dh
            buf *= a[:, 3 * H:]
            dc += buf
            np.multiply(dc, a[:, 2 * H:3 * H], out=dz[:, :H])
            np.multiply(dc, cs[n], out=dz[:, H:2 * H])
            np.multiply(dc, a[:, :H], out=dz[:, 2 * H:3 * H])
            np.multiply(dh, tc, out=dz[:, 3 * H:])
            # gate derivatives: s (1 - s) for the sigmoids, 1 - g^2 for the cell input
            np.subtract(1.0, a, out=der)
            der *= a
            g = a[:, 2 * H:3 * H]
            np.multiply(g, g, out=der[:, 2 * H:3 * H])
            np.subtract(1.0, der[:, 2 * H:3 * H], out=der[:, 2 * H:3 * H])
            dz *= der
            dW += XH[n].T @ dz
            np.matmul(dz, WT, out=dxh)
            dX[n] = dxh[:, :n_in]
            dh_next[:] = dxh[:, n_in:n_in + H]
        return to_batch(dX), dW[:n_in], dW[n_in:n_in + H], dW[-1]

    if not T._tracks(x, Wx, Wh, b):
        return Tensor(out, _op="lstm")
    return Tensor(out, _parents=(x, Wx, Wh, b), _backward=back, _op="lstm")

class LSTM(Module):
    """Unidirectional LSTM over a whole sequence."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, reverse: bool = False):
        super().__init__()
        self.n_in, self.hidden, self.reverse = n_in, hidden, reverse
        _lstm_init(self, n_in, hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        return lstm_sequence(x, self.Wx, self.Wh, self.b, self.reverse)


class BiLSTM(Module):
    """Forward and backward LSTMs, outputs concatenated per time step."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        self.fwd = self.add_module("fwd", LSTM(n_in, hidden, rng))
        self.bwd = self.add_module("bwd", LSTM(n_in, hidden, rng, reverse=True))

    def forward(self, x: Tensor) -> Tensor:
        return T.concat([self.fwd(x), self.bwd(x)], axis=-1)
