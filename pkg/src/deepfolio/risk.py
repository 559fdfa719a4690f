"""Performance and risk measures, plus the differential Sharpe / downside-deviation rewards."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

PERIODS_PER_YEAR = 252
EPS = 1e-8
ETA = 0.01


class DegenerateSeriesError(ValueError):
    """Raised when a ratio is undefined (zero variance, no downside)."""


def _series(r, min_len: int = 1) -> np.ndarray:
    r = np.asarray(r, float).ravel()
    if len(r) < min_len:
        raise ValueError(f"need at least {min_len} returns, got {len(r)}")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")
    return r


def sharpe(r) -> float:
    r = _series(r, 2)
    var = r.var()
    if var < 1e-18:
        raise DegenerateSeriesError("zero-variance series has no Sharpe ratio")
    return float(r.mean() / math.sqrt(var))


def downside_deviation(r, target: float = 0.0) -> float:
    r = _series(r)
    return float(np.sqrt(np.mean(np.minimum(r - target, 0.0) ** 2)))


def sortino(r, target: float = 0.0) -> float:
    r = _series(r, 1)
    if not np.any(r < target):
        raise DegenerateSeriesError("no returns below target, Sortino ratio undefined")
    return float((r.mean() - target) / downside_deviation(r, target))


def var_cvar(r, alpha: float = 0.95) -> tuple[float, float]:
    """Historical VaR and CVaR at level ``alpha``, as positive loss numbers."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    need = math.ceil(round(1 / (1 - alpha), 9))
    r = _series(r, need)
    q = np.quantile(r, 1 - alpha, method="lower")
    return float(-q), float(-r[r <= q].mean())


def mdd(equity) -> float:
    v = np.asarray(equity, float).ravel()
    if len(v) == 0:
        raise ValueError("empty equity curve")
    if np.any(v <= 0):
        raise ValueError("equity values must be positive")
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def annualize(r, periods: int = PERIODS_PER_YEAR) -> tuple[float, float]:
    r = _series(r, 1)
    return float(math.expm1(r.mean() * periods)), float(r.std() * math.sqrt(periods))


# --- differential ratios ---------------------------------------------------------

@dataclass
class DsrState:
    nu: float = 0.0
    omega: float = 0.0
    eta: float = ETA


@dataclass
class D3rState:
    nu: float = 0.0
    dd2: float = 0.0
    eta: float = ETA


def dsr_update(state: DsrState, r: float) -> tuple[float, DsrState]:
    d_nu = r - state.nu
    d_om = r * r - state.omega
    var = max(state.omega - state.nu ** 2, 0.0)
    d = (state.omega * d_nu - 0.5 * state.nu * d_om) / (var ** 1.5 + EPS)
    new = DsrState(state.nu + state.eta * d_nu, state.omega + state.eta * d_om, state.eta)
    return float(d), new


def d3r_update(state: D3rState, r: float) -> tuple[float, D3rState]:
    nu, dd2 = state.nu, state.dd2
    dd = math.sqrt(dd2)
    if r > 0:
        d = (r - 0.5 * nu) / (dd + EPS)
    else:
        d = (dd2 * (r - 0.5 * nu) - 0.5 * nu * r * r) / (dd ** 3 + EPS)
    new = D3rState(nu + state.eta * (r - nu), dd2 + state.eta * (min(r, 0.0) ** 2 - dd2), state.eta)
    return float(d), new


def moving_sharpe(nu: float, omega: float) -> float:
    return nu / math.sqrt(omega - nu * nu)


# --- lead/lag diagnostic --------------------------------------------------------

def cross_correlation(x, y, max_lag: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Normalized ``R(l) = sum_t x(t) y(t-l)`` for ``l`` in ``[-max_lag, max_lag]``.

    Both series are demeaned; each lag is divided by its overlap length and the
    two standard deviations, so values are correlations. Returns
    ``(lags, R, trend_lag)`` with ties going to the smallest ``|l|``.
    """
    x, y = _series(x), _series(y)
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    if len(x) <= max_lag or max_lag < 0:
        raise ValueError(f"series of length {len(x)} too short for max_lag {max_lag}")
    x, y = x - x.mean(), y - y.mean()
    scale = x.std() * y.std()
    n = len(x)
    lags = np.arange(-max_lag, max_lag + 1)
    R = np.zeros(len(lags))
    for i, l in enumerate(lags):
        if l >= 0:
            prod = x[l:] @ y[:n - l]
        else:
            prod = x[:n + l] @ y[-l:]
        R[i] = prod / ((n - abs(l)) * scale) if scale > 0 else 0.0
    order = sorted(range(len(lags)), key=lambda i: (-R[i], abs(lags[i])))
    return lags, R, int(lags[order[0]])


# --- report -----------------------------------------------------------------------

@dataclass
class MetricsReport:
    final_account_value: float
    ann_return: float
    ann_volatility: float
    sharpe: float | None
    sortino: float | None
    var_95: float | None
    cvar_95: float | None
    mdd: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _maybe(f, *args):
    try:
        return f(*args)
    except (DegenerateSeriesError, ValueError):
        return None


def metrics_report(equity, periods: int = PERIODS_PER_YEAR) -> MetricsReport:
    """Table-style summary from an equity curve (log returns between consecutive values).

    Sharpe and Sortino are annualized by ``sqrt(periods)``. Undefined entries are None.
    """
    v = np.asarray(equity, float).ravel()
    if len(v) < 2:
        raise ValueError("need at least two equity values")
    r = np.diff(np.log(v))
    ann_ret, ann_vol = annualize(r, periods)
    sr = _maybe(sharpe, r)
    so = _maybe(sortino, r)
    tail = _maybe(var_cvar, r, 0.95)
    root = math.sqrt(periods)
    return MetricsReport(
        final_account_value=float(v[-1]), ann_return=ann_ret, ann_volatility=ann_vol,
        sharpe=None if sr is None else sr * root, sortino=None if so is None else so * root,
        var_95=None if tail is None else tail[0], cvar_95=None if tail is None else tail[1],
        mdd=mdd(v))
