"""Central finite differences used by the validation panels and tests."""

from __future__ import annotations

import numpy as np


def gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a d-vector."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        out[j] = (f(xp) - f(xm)) / (2.0 * step)
    return out


def jacobian(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function of a d-vector."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * step))
    return np.stack(cols, axis=-1)
