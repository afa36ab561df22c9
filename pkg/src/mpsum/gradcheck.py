"""Central finite differences for checking hand-written gradients."""
from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x``,
    perturbing ``x`` in place and restoring it."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * step)
    return g


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)``: the worst entry error relative to
    the gradient's scale (0 when both are identically zero)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)
