"""Behavior cloning: an exact one-step greedy expert and the clone loss.

The expert maximizes next-period growth net of proportional costs,

    max_w  u . w - c * sum_{i>=1} |w_i - w_prev_i|   over the simplex,

which becomes a small LP once each absolute value is split into a buy part
and a sell part. The LP is solved with a dense two-phase tableau simplex
using Bland's rule, so it terminates on degenerate problems too.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from deepfolio.nn.losses import binary_log_loss_value
from deepfolio.nn.tensor import ShapeError

TOL = 1e-12
CLONE_WEIGHT = 0.1


class LPError(ValueError):
    pass


@dataclass
class GreedyProblem:
    u: np.ndarray
    w_prev: np.ndarray
    c: float

    def __post_init__(self):
        self.u = np.asarray(self.u, float)
        self.w_prev = np.asarray(self.w_prev, float)
        if self.u.ndim != 1 or self.u.shape != self.w_prev.shape or len(self.u) < 2:
            raise ValueError("u and w_prev must be vectors of the same length m+1 >= 2")
        if not np.all(np.isfinite(self.u)) or np.any(self.u <= 0):
            raise ValueError("price relatives must be positive and finite")
        if np.any(self.w_prev < -1e-12) or abs(self.w_prev.sum() - 1) > 1e-9:
            raise ValueError("w_prev must lie on the simplex")
        if not np.isfinite(self.c) or self.c < 0:
            raise ValueError("cost rate must be non-negative")
        self.w_prev = np.clip(self.w_prev, 0.0, None)


@dataclass
class ExpertAction:
    w_star: np.ndarray
    objective_value: float


def greedy_objective(problem: GreedyProblem, w) -> np.ndarray:
    """Objective at one weight vector or at a batch of them (rows)."""
    w = np.asarray(w, float)
    turnover = np.abs(w[..., 1:] - problem.w_prev[1:]).sum(axis=-1)
    return w @ problem.u - problem.c * turnover


# --- dense simplex ------------------------------------------------------------

def _pivot(T: np.ndarray, r: int, k: int) -> None:
    T[r] /= T[r, k]
    col = T[:, k].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T: np.ndarray, basis: list[int], n: int) -> None:
    """Maximize in place. Last row holds reduced costs, last column the rhs."""
    for _ in range(10_000):
        d = T[-1, :n]
        entering = np.flatnonzero(d > TOL)
        if len(entering) == 0:
            return
        k = int(entering[0])  # Bland: lowest index
        col = T[:-1, k]
        rows = np.flatnonzero(col > TOL)
        if len(rows) == 0:
            raise LPError("unbounded LP")
        ratios = T[rows, -1] / col[rows]
        ties = rows[ratios <= ratios.min() + TOL]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, k)
        basis[r] = k
    raise LPError("simplex did not terminate")


def simplex_max(c, A, b):
    """Maximize ``c.x`` subject to ``A x = b``, ``x >= 0``.

    Returns ``(x, value, reduced_costs)``; reduced costs are <= 0 at the optimum.
    """
    c, A, b = np.asarray(c, float), np.asarray(A, float), np.asarray(b, float)
    rows, n = A.shape
    flip = b < 0
    A, b = A.copy(), b.copy()
    A[flip] *= -1
    b[flip] *= -1
    # phase 1: one artificial per row
    T = np.zeros((rows + 1, n + rows + 1))
    T[:rows, :n] = A
    T[:rows, n:n + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :n] = A.sum(axis=0)
    T[-1, -1] = b.sum()  # the corner holds minus the objective value
    basis = list(range(n, n + rows))
    _run(T, basis, n + rows)
    if T[-1, -1] > 1e-9:
        raise LPError("infeasible LP")
    # drive leftover artificials out of the basis, dropping redundant rows
    keep = []
    for r in range(rows):
        if basis[r] >= n:
            nz = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if len(nz) == 0:
                continue
            _pivot(T, r, int(nz[0]))
            basis[r] = int(nz[0])
        keep.append(r)
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    # phase 2
    T2[-1, :n] = c
    for r, j in enumerate(basis):
        if c[j] != 0:
            T2[-1] -= c[j] * T2[r]
    _run(T2, basis, n)
    x = np.zeros(n)
    x[basis] = np.clip(T2[:-1, -1], 0.0, None)
    return x, float(c @ x), T2[-1, :n].copy()


def _restricted(c, A, b, free: np.ndarray):
    """Solve with columns outside ``free`` pinned at zero; map results back."""
    x_f, val, d_f = simplex_max(c[free], A[:, free], b)
    x = np.zeros(len(c))
    x[free] = x_f
    d = np.zeros(len(c))
    d[free] = d_f
    return x, val, d


def greedy_lp(problem: GreedyProblem):
    """Variables ``[w_0..w_m, b_1..b_m, s_1..s_m]`` with ``w_i = w_prev_i + b_i - s_i``."""
    m = len(problem.u) - 1
    n = 3 * m + 1
    A = np.zeros((m + 1, n))
    rhs = np.zeros(m + 1)
    A[0, :m + 1] = 1.0
    rhs[0] = 1.0
    for i in range(1, m + 1):
        A[i, i] = 1.0
        A[i, m + i] = -1.0
        A[i, 2 * m + i] = 1.0
        rhs[i] = problem.w_prev[i]
    cost = np.concatenate([problem.u, np.full(2 * m, -problem.c)])
    return cost, A, rhs


def solve_greedy(problem: GreedyProblem) -> ExpertAction:
    """Exact optimum; among optimal faces prefer least turnover, then lexicographically smallest w."""
    m = len(problem.u) - 1
    cost, A, rhs = greedy_lp(problem)
    n = len(cost)
    free = np.ones(n, dtype=bool)
    # Each stage keeps only the optimal face of the previous one: a variable with a
    # strictly negative reduced cost must be zero in every optimal solution.
    stages = [cost, np.concatenate([np.zeros(m + 1), -np.ones(2 * m)])]
    for i in range(m + 1):
        e = np.zeros(n)
        e[i] = -1.0
        stages.append(e)
    x = None
    for obj in stages:
        x, _, d = _restricted(obj, A, rhs, free)
        free &= ~(d < -1e-10)
    w = np.clip(x[:m + 1], 0.0, None)
    w /= w.sum()
    return ExpertAction(w, float(greedy_objective(problem, w)))


def expert_action(u, w_prev, c) -> np.ndarray:
    return solve_greedy(GreedyProblem(u, w_prev, c)).w_star


# --- clone loss ------------------------------------------------------------------

def clone_loss(actor_actions, expert_actions) -> tuple[float, np.ndarray]:
    """Bernoulli log-loss between actor and expert weights, averaged over N(m+1) entries.

    Returns the loss and its gradient with respect to ``actor_actions``
    (zero where the actor was clamped).
    """
    a = np.asarray(actor_actions, float)
    e = np.asarray(expert_actions, float)
    if a.shape != e.shape:
        raise ShapeError(f"actor actions {a.shape} vs expert actions {e.shape}")
    return binary_log_loss_value(a, e)
