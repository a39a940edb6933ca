"""Shared test oracles: finite differences and relative-error reduction."""

import numpy as np


def fd_grad(f, x, step=1e-5):
    """Central-difference gradient of the scalar function ``f`` with respect
    to the array ``x``, which ``f`` must read on every call. ``x`` is
    perturbed in place and restored."""
    g = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        f_plus = f()
        flat_x[i] = orig - step
        f_minus = f()
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * step)
    return g


def max_rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    f = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
    return float(np.max(np.abs(a - f) / denom))


def matmul_oracle(a, b):
    """Naive triple loop product, independent of any BLAS path."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out
