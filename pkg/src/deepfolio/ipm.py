"""Infused prediction module: an online nonlinear dynamic Boltzmann machine.

Units are the close/high/low percentage changes of every risky asset, laid out
as three blocks ``[close_1..close_m, high_1..high_m, low_1..low_m]``. Each unit
is Gaussian given the history, with mean

    mu = b + A^T psi + sum_delta F[delta] x[t-delta] + sum_k G[k] alpha_k

where ``psi`` is the state of a fixed random tanh reservoir fed with the
observations. Learning is plain RMSProp ascent on the one-step log density,
so a step costs the same no matter how long the stream is.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from deepfolio.nn import NonFiniteError, checkpoint

DECAY_RATES = (0.1, 0.2, 0.5, 0.8)
VAR_FLOOR = 1e-6
LEARNED = ("b", "F", "G", "A", "log_sigma2")


@dataclass
class PredictionTriplet:
    h_close: np.ndarray
    h_high: np.ndarray
    h_low: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.h_close, self.h_high, self.h_low])


@dataclass
class NdybmState:
    b: np.ndarray            # (N,)
    F: np.ndarray            # (d-1, N, N), F[delta-1] multiplies x[t-delta]
    G: np.ndarray            # (K, N, N)
    log_sigma2: np.ndarray   # (N,)
    alpha: np.ndarray        # (K, N) eligibility traces
    fifo: np.ndarray         # (d-1, N), row 0 is the most recent observation
    decay: np.ndarray        # (K,)
    W_rnn: np.ndarray        # (M, M)
    W_in: np.ndarray         # (M, N)
    A: np.ndarray            # (M, N)
    psi: np.ndarray          # (M,)
    lr: float = 1e-3
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    rms: dict | None = None
    steps: int = 0

    @property
    def N(self) -> int:
        return len(self.b)

    @property
    def d(self) -> int:
        return self.fifo.shape[0] + 1

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_sigma2)

    def bias(self) -> np.ndarray:
        """Effective bias: the learned offset plus the reservoir readout."""
        return self.b + self.A.T @ self.psi

    def reset_history(self) -> None:
        """Forget the observed past (fifo, traces, reservoir) but keep learned weights."""
        self.fifo[:] = 0
        self.alpha[:] = 0
        self.psi[:] = 0

    def copy(self) -> "NdybmState":
        return copy.deepcopy(self)


def init_state(n_units: int, rng: np.random.Generator, d: int = 3, decay=DECAY_RATES, rnn_dim: int = 100,
               spectral_radius: float | None = 0.95, in_sd: float = 0.1, sigma2: float = 1.0,
               lr: float = 1e-3) -> NdybmState:
    """Zero NDyBM weights, zero history, random reservoir."""
    if d < 2:
        raise ValueError("delay d must be at least 2")
    N, M, K = n_units, rnn_dim, len(decay)
    W_rnn = rng.normal(size=(M, M))
    if spectral_radius is not None:
        W_rnn *= spectral_radius / np.max(np.abs(np.linalg.eigvals(W_rnn)))
    W_in = rng.normal(0.0, in_sd, size=(M, N))
    st = NdybmState(b=np.zeros(N), F=np.zeros((d - 1, N, N)), G=np.zeros((K, N, N)),
                    log_sigma2=np.full(N, np.log(sigma2)), alpha=np.zeros((K, N)), fifo=np.zeros((d - 1, N)),
                    decay=np.asarray(decay, float), W_rnn=W_rnn, W_in=W_in, A=np.zeros((M, N)),
                    psi=np.zeros(M), lr=lr)
    st.rms = {k: np.zeros_like(getattr(st, k)) for k in LEARNED}
    return st


def ndybm_mu(state: NdybmState) -> np.ndarray:
    mu = state.bias()
    mu = mu + np.einsum("dji,di->j", state.F, state.fifo)
    mu = mu + np.einsum("kji,ki->j", state.G, state.alpha)
    return mu


def log_density(state: NdybmState, x: np.ndarray) -> float:
    mu = ndybm_mu(state)
    s2 = state.sigma2
    return float(np.sum(-0.5 * np.log(2 * np.pi * s2) - (x - mu) ** 2 / (2 * s2)))


def gradients(state: NdybmState, x: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradient of ``log p(x | history)`` for every learned array."""
    mu = ndybm_mu(state)
    s2 = state.sigma2
    r = x - mu
    g = r / s2
    return {
        "b": g,
        "F": g[None, :, None] * state.fifo[:, None, :],
        "G": g[None, :, None] * state.alpha[:, None, :],
        "A": np.outer(state.psi, g),
        # d/d log s2 = s2 * ((r^2 - s2) / (2 s2^2))
        "log_sigma2": (r * r - s2) / (2 * s2),
    }


def fifo_push(state: NdybmState, x: np.ndarray) -> np.ndarray:
    """Push ``x`` in, return the vector that falls out (x[t-d+1] once warm)."""
    out = state.fifo[-1].copy()
    state.fifo[1:] = state.fifo[:-1]
    state.fifo[0] = x
    return out


def trace_update(state: NdybmState, injected: np.ndarray) -> None:
    state.alpha = state.decay[:, None] * state.alpha + np.asarray(injected, float)[None, :]


def rnn_bias_update(state: NdybmState, x: np.ndarray) -> None:
    state.psi = np.tanh(state.W_rnn @ state.psi + state.W_in @ x)


def ndybm_update(state: NdybmState, x: np.ndarray) -> None:
    """One online step: RMSProp ascent, then fifo, traces and reservoir.

    Raises ``NonFiniteError`` and leaves ``state`` untouched if anything blows up.
    """
    x = np.asarray(x, float)
    if x.shape != (state.N,):
        raise ValueError(f"expected input of length {state.N}, got {x.shape}")
    grads = gradients(state, x)
    new, new_rms = {}, {}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}")
        v = state.rms_decay * state.rms[k] + (1 - state.rms_decay) * g * g
        new[k] = getattr(state, k) + state.lr * g / (np.sqrt(v) + state.rms_eps)
        new_rms[k] = v
    new["log_sigma2"] = np.maximum(new["log_sigma2"], np.log(VAR_FLOOR))
    if not all(np.all(np.isfinite(v)) for v in new.values()):
        raise NonFiniteError("parameter update produced non-finite values")
    for k in LEARNED:
        setattr(state, k, new[k])
    state.rms = new_rms
    trace_update(state, fifo_push(state, x))
    rnn_bias_update(state, x)
    state.steps += 1


def smooth_inputs(series, noise_sd: float = 0.01, window: int = 5, order: int = 3,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Add Gaussian jitter, then Savitzky-Golay smooth each column (offline use only)."""
    x = np.asarray(series, float)
    if window % 2 == 0 or window <= order:
        raise ValueError(f"window {window} must be odd and larger than order {order}")
    if len(x) < window:
        raise ValueError(f"series of length {len(x)} shorter than window {window}")
    if noise_sd > 0:
        rng = rng if rng is not None else np.random.default_rng()
        x = x + rng.normal(0.0, noise_sd, size=x.shape)
    return savgol_filter(x, window, order, axis=0, mode="interp")


def split_triplet(mu: np.ndarray) -> PredictionTriplet:
    m = len(mu) // 3
    return PredictionTriplet(mu[:m].copy(), mu[m:2 * m].copy(), mu[2 * m:].copy())


def ipm_step(state: NdybmState, x: np.ndarray) -> PredictionTriplet:
    """Forecast from the history seen so far, then learn from the new observation ``x``.

    The forecast never looks at ``x``. A live caller that has just seen bar t
    and wants bar t+1 should call ``ndybm_update`` then ``predict`` instead.
    """
    out = split_triplet(ndybm_mu(state))
    ndybm_update(state, x)
    return out


def predict(state: NdybmState) -> PredictionTriplet:
    return split_triplet(ndybm_mu(state))


_ARRAYS = ("b", "F", "G", "log_sigma2", "alpha", "fifo", "decay", "W_rnn", "W_in", "A", "psi")


def save_state(state: NdybmState, path) -> None:
    arrays = {k: getattr(state, k) for k in _ARRAYS}
    arrays.update({f"rms.{k}": v for k, v in state.rms.items()})
    checkpoint.save(path, arrays, {"kind": "ndybm", "lr": state.lr, "steps": state.steps})


def load_state(path) -> NdybmState:
    arrays, meta = checkpoint.load(path)
    if meta.get("kind") != "ndybm":
        raise ValueError(f"{path} is not an NDyBM checkpoint")
    st = NdybmState(**{k: arrays[k] for k in _ARRAYS}, lr=meta["lr"], steps=meta["steps"])
    st.rms = {k: arrays[f"rms.{k}"] for k in LEARNED}
    return st
