"""Market simulation: weight drift, proportional costs, integer-share execution, CRP benchmark.

Two modes share one loop. ``idealized`` is the frictionless weight-space model
with a multiplicative cost factor; ``realistic`` holds whole shares, trades at
the next bar's open with adverse slippage and pays a fee on notional.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from deepfolio.market_data import MarketData
from deepfolio.risk import MetricsReport, metrics_report

log = logging.getLogger(__name__)

INITIAL_VALUE = 500_000.0


@dataclass
class ExecutionConfig:
    fee_rate: float = 0.002
    slippage_rate: float = 0.005
    mode: str = "idealized"
    decision_period: int = 1
    initial_value: float = INITIAL_VALUE

    def __post_init__(self):
        if self.fee_rate < 0 or self.slippage_rate < 0:
            raise ValueError("fee and slippage rates must be non-negative")
        if self.mode not in ("idealized", "realistic"):
            raise ValueError(f"unknown execution mode {self.mode!r}")
        if self.decision_period < 1:
            raise ValueError("decision_period must be at least 1 bar")
        if self.initial_value <= 0:
            raise ValueError("initial value must be positive")


@dataclass
class Account:
    value: float
    weights: np.ndarray
    cash: float = 0.0
    shares: np.ndarray | None = None   # whole shares per risky asset, realistic mode only

    @classmethod
    def fresh(cls, m: int, value: float = INITIAL_VALUE, realistic: bool = False) -> "Account":
        w = np.zeros(m + 1)
        w[0] = 1.0
        if realistic:
            return cls(value, w, cash=value, shares=np.zeros(m, dtype=np.int64))
        return cls(value, w)

    def revalue(self, prices: np.ndarray) -> None:
        """Mark whole-share holdings to ``prices`` (risky assets only)."""
        held = self.shares * prices
        self.value = float(self.cash + held.sum())
        self.weights = np.concatenate([[self.cash], held]) / self.value

    def copy(self) -> "Account":
        return Account(self.value, self.weights.copy(), self.cash,
                       None if self.shares is None else self.shares.copy())


@dataclass
class Order:
    asset: int        # 1..m
    quantity: int     # signed


@dataclass
class Fill:
    t: int
    asset: int
    quantity: int
    price: float
    fee: float


@dataclass
class Observation:
    """What a policy may see at decision time ``t``: bars up to and including ``t``."""
    t: int
    data: MarketData
    weights: np.ndarray


@dataclass
class BacktestResult:
    equity: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    fills: list[Fill] = field(default_factory=list)
    metrics: MetricsReport | None = None
    timestamps: np.ndarray | None = None


def check_simplex(w, tol: float = 1e-6) -> np.ndarray:
    """Renormalize weights that are within ``tol`` of the simplex, reject the rest."""
    w = np.asarray(w, float)
    if not np.all(np.isfinite(w)) or np.any(w < -tol) or abs(w.sum() - 1) > tol:
        raise ValueError(f"weights off the simplex: {w}")
    w = np.clip(w, 0.0, None)
    return w / w.sum()


# --- idealized model -----------------------------------------------------------

def drift_weights(w_prev, u) -> np.ndarray:
    grown = np.asarray(u, float) * np.asarray(w_prev, float)
    return grown / grown.sum()


def cost_factor(w_drifted, w_target, c: float) -> float:
    """Fraction of value kept after paying ``c`` on the risky-asset turnover."""
    turnover = np.abs(np.asarray(w_drifted)[1:] - np.asarray(w_target)[1:]).sum()
    return 1.0 - c * float(turnover)


def growth_factor(w, u) -> float:
    # written as 1 + excess so a flat bar gives exactly 1 even if the weights sum to 1 - ulp
    return 1.0 + float((np.asarray(u, float) - 1.0) @ w)


def step_idealized(account: Account, u, w_target, c: float) -> tuple[float, Account]:
    u = np.asarray(u, float)
    growth = growth_factor(account.weights, u)
    w_drift = drift_weights(account.weights, u)
    cbar = cost_factor(w_drift, w_target, c)
    if cbar <= 0:
        raise ValueError("costs exceed portfolio value")
    out = Account(account.value * growth * cbar, np.asarray(w_target, float).copy())
    return math.log(cbar * growth), out


# --- realistic execution ------------------------------------------------------------

def rebalance_orders(account: Account, w_target, prices) -> list[Order]:
    """Whole-share orders reaching ``floor(w_i * value / p_i)`` shares per risky asset."""
    w_target = check_simplex(w_target)
    prices = np.asarray(prices, float)
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    value = account.cash + float(account.shares @ prices)
    target = np.floor(w_target[1:] * value / prices + 1e-9).astype(np.int64)
    diff = target - account.shares
    return [Order(i + 1, int(q)) for i, q in enumerate(diff) if q != 0]


def execute(account: Account, orders: list[Order], open_px, close_px, cfg: ExecutionConfig,
            t: int = 0) -> tuple[list[Fill], Account]:
    """Fill at ``open_px`` with adverse slippage (sells first), then mark to ``close_px``.

    A buy the cash cannot cover is cut to the largest affordable whole quantity.
    """
    acc = account.copy()
    fills = []
    open_px = np.asarray(open_px, float)
    for o in sorted(orders, key=lambda o: (o.quantity > 0, o.asset)):
        if o.quantity == 0:
            continue
        i = o.asset - 1
        if o.quantity < 0:
            qty = -min(-o.quantity, int(acc.shares[i]))
            px = open_px[i] * (1 - cfg.slippage_rate)
        else:
            px = open_px[i] * (1 + cfg.slippage_rate)
            affordable = int(math.floor(acc.cash / (px * (1 + cfg.fee_rate)) + 1e-12))
            qty = min(o.quantity, max(affordable, 0))
            while qty > 0 and qty * px * (1 + cfg.fee_rate) > acc.cash:
                qty -= 1
            if qty < o.quantity:
                log.info("t=%d asset %d: buy of %d scaled to %d shares (cash %.2f)",
                         t, o.asset, o.quantity, qty, acc.cash)
        if qty == 0:
            continue
        notional = abs(qty) * px
        fee = cfg.fee_rate * notional
        acc.cash += -qty * px - fee
        acc.shares[i] += qty
        fills.append(Fill(t, o.asset, qty, float(px), float(fee)))
    acc.revalue(np.asarray(close_px, float))
    return fills, acc


# --- loops ---------------------------------------------------------------------------

Policy = Callable[[Observation], np.ndarray]


def run_backtest(policy: Policy, data: MarketData, cfg: ExecutionConfig | None = None,
                 start: int = 0) -> BacktestResult:
    """Walk bars ``start..T-1``; decide at each close, realize over the next bar.

    The policy sees only bars up to the decision time. Between decision times
    (``decision_period`` > 1) the portfolio is left to drift.
    """
    cfg = cfg or ExecutionConfig()
    T = len(data)
    if T - start < 2:
        raise ValueError("need at least two bars to backtest")
    m = data.m
    realistic = cfg.mode == "realistic"
    acc = Account.fresh(m, cfg.initial_value, realistic)
    equity, rewards, weights, fills = [acc.value], [], [acc.weights.copy()], []
    for t in range(start, T - 1):
        decide = (t - start) % cfg.decision_period == 0
        w_target = None
        if decide:
            w_target = check_simplex(policy(Observation(t, data.slice(0, t + 1), acc.weights.copy())))
        if realistic:
            orders = rebalance_orders(acc, w_target, data.close[t, 1:]) if decide else []
            new_fills, nxt = execute(acc, orders, data.open[t + 1, 1:], data.close[t + 1, 1:], cfg, t + 1)
            fills.extend(new_fills)
            r = math.log(nxt.value / acc.value)
        else:
            # rebalance at the close of t, then grow over bar t+1
            if decide:
                cbar = cost_factor(acc.weights, w_target, cfg.fee_rate)
                acc = Account(acc.value * cbar, w_target)
            else:
                cbar = 1.0
            u = data.close[t + 1] / data.close[t]
            growth = growth_factor(acc.weights, u)
            nxt = Account(acc.value * growth, drift_weights(acc.weights, u))
            r = math.log(cbar * growth)
        acc = nxt
        equity.append(acc.value)
        rewards.append(r)
        weights.append(acc.weights.copy())
    equity = np.array(equity)
    return BacktestResult(equity, np.array(rewards), np.array(weights), fills, metrics_report(equity),
                          data.timestamps[start:])


def uniform_policy(m: int) -> Policy:
    w = np.full(m + 1, 1.0 / (m + 1))
    return lambda obs: w


def run_crp(data: MarketData, cfg: ExecutionConfig | None = None, start: int = 0) -> BacktestResult:
    """Constantly rebalanced portfolio with equal weight on cash and every asset."""
    return run_backtest(uniform_policy(data.m), data, cfg, start)


def hold_cash(obs: Observation) -> np.ndarray:
    w = np.zeros(len(obs.weights))
    w[0] = 1.0
    return w


# --- artifacts ----------------------------------------------------------------------

def write_equity_csv(result: BacktestResult, path, assets: list[str] | None = None) -> None:
    m1 = result.weights.shape[1]
    names = ["cash"] + (assets or [f"asset{i}" for i in range(1, m1)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "timestamp", "equity", "reward"] + [f"w_{n}" for n in names])
        for i, v in enumerate(result.equity):
            ts = "" if result.timestamps is None else str(result.timestamps[i])
            r = "" if i == 0 else repr(float(result.rewards[i - 1]))
            w.writerow([i, ts, repr(float(v)), r] + [repr(float(x)) for x in result.weights[i]])


def read_equity_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row["equity"]) for row in csv.DictReader(fh)])


def write_fills_csv(result: BacktestResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "asset", "quantity", "price", "fee"])
        for f in result.fills:
            w.writerow([f.t, f.asset, f.quantity, repr(f.price), repr(f.fee)])
