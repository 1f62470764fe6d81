"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=1e-6):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
