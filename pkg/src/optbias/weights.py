"""Bias-corrected exponential averaging weights shared across modules."""

from __future__ import annotations

import numpy as np


def weight(t: int, k: int, beta: float) -> float:
    """Weight of the step-k gradient inside a bias-corrected average at step t."""
    if not 0 <= k <= t:
        raise ValueError(f"need 0 <= k <= t, got k={k}, t={t}")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if beta == 0.0:
        return 1.0 if k == t else 0.0
    return beta ** (t - k) * (1.0 - beta) / (1.0 - beta ** (t + 1))


def weight_vector(t: int, beta: float) -> np.ndarray:
    """All weights for steps 0..t; the entries sum to one."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    powers = beta ** np.arange(t, -1, -1, dtype=float)
    denom = 1.0 - beta ** (t + 1)
    return powers * (1.0 - beta) / denom


def weight_matrix(t: int, beta: float) -> np.ndarray:
    """Lower-triangular matrix W[l, k] = weight(l, k, beta) for k <= l <= t."""
    w = np.zeros((t + 1, t + 1))
    for level in range(t + 1):
        w[level, : level + 1] = weight_vector(level, beta)
    return w
