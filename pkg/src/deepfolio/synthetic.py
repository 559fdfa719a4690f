"""Seeded synthetic OHLC markets for tests, demos and desk-scale experiments."""
from __future__ import annotations

import numpy as np

from deepfolio.market_data import MarketData


def ar1_returns(n: int, phi: float, sigma: float, rng: np.random.Generator, drift: float = 0.0,
                dims: int = 1) -> np.ndarray:
    out = np.zeros((n, dims))
    prev = np.zeros(dims)
    for t in range(n):
        prev = drift + phi * (prev - drift) + sigma * rng.normal(size=dims)
        out[t] = prev
    return out


def momentum_market(n_bars: int = 3000, n_risky: int = 7, seed: int = 0, phi: float = 0.5,
                    sigma: float = 0.015, drift: float = 0.0003, with_index: bool = True,
                    start: str = "2005-01-03") -> MarketData:
    """Risky assets whose log returns follow AR(1) with positive autocorrelation ``phi``.

    Bars are one day apart. Opens gap slightly from the previous close and
    highs/lows extend past the open/close by a half-normal excursion.
    """
    rng = np.random.default_rng(seed)
    rets = ar1_returns(n_bars, phi, sigma, rng, drift=drift, dims=n_risky)
    close = 100.0 * np.exp(np.cumsum(rets, axis=0))
    prev_close = np.vstack([np.full(n_risky, 100.0), close[:-1]])
    opn = prev_close * np.exp(0.1 * sigma * rng.normal(size=close.shape))
    hi = np.maximum(opn, close) * np.exp(np.abs(rng.normal(size=close.shape)) * 0.3 * sigma)
    lo = np.minimum(opn, close) * np.exp(-np.abs(rng.normal(size=close.shape)) * 0.3 * sigma)
    ones = np.ones((n_bars, 1))
    stamps = np.datetime64(start, "s") + np.arange(n_bars) * np.timedelta64(1, "D")
    index_close = 1000.0 * np.exp(np.cumsum(rets.mean(axis=1))) if with_index else None
    return MarketData(stamps, [f"A{i}" for i in range(1, n_risky + 1)], np.hstack([ones, opn]),
                      np.hstack([ones, hi]), np.hstack([ones, lo]), np.hstack([ones, close]), index_close)

