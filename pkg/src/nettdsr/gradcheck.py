"""Central finite differences, used as the oracle for every analytic gradient."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


def numeric_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    eps: float = 1e-5,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    If ``indices`` (flat positions) is given, only those entries are
    estimated; the rest of the returned array is zero.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), with 0 for two zero arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
