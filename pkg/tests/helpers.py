"""Shared test oracles."""
import numpy as np


def central_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise relative error, with an absolute floor for near-zero entries."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# one line per acceptance criterion, printed in the terminal summary by conftest
ACCEPTANCE: list[str] = []


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail
