"""Finite-difference oracles, independent of the autodiff path under test."""

import numpy as np


def central_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Elementwise central finite difference of scalar f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def directional_diff(f, x: np.ndarray, v: np.ndarray, step: float = 1e-4) -> float:
    """Central difference of scalar f along direction v at x (in place)."""
    x += step * v
    fp = f()
    x -= 2.0 * step * v
    fm = f()
    x += step * v
    return (fp - fm) / (2.0 * step)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
