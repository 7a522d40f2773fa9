"""Range-based connectivity between vehicles."""
from __future__ import annotations

import numpy as np


def build_matrix(x: np.ndarray, y: np.ndarray, r_tr: float) -> np.ndarray:
    """Binary N x N reachability: 1 where centre distance <= ``r_tr``."""
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    return (np.hypot(dx, dy) <= r_tr).astype(np.int8)


def count_in_range(h: np.ndarray, target: int) -> int:
    """Vehicles within range of ``target``, the target itself included."""
    return int(h[target].sum())


def in_range_counts(h: np.ndarray) -> np.ndarray:
    return h.sum(axis=1, dtype=np.int64)
