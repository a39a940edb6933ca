"""Wall-time measurement of the fusion forward pass.

Used to confirm the quadratic cost in the embedding width: at fixed batch
size the forward is dominated by the reduction/restore products and the
covariance update, all O(n d^2). BLAS threading is pinned to one thread
during measurement so the scaling is not masked by size-dependent thread
dispatch, the widths are measured in interleaved rounds so machine noise
hits all of them alike, and the fastest round per width is reported (any
slowdown is interference, so the minimum is the least-contaminated
observation).
"""

from __future__ import annotations

import time

import numpy as np
from threadpoolctl import threadpool_limits

from .fusion import corrfusion_forward, init_corrfusion


def fusion_forward_seconds(n: int, dims: list[int], r: int = 2, repeats: int = 15,
                           seed: int = 0) -> list[tuple[int, float]]:
    """Best seconds per training-mode forward for each width in ``dims``."""
    cases = []
    for d in dims:
        rng = np.random.default_rng(seed)
        state = init_corrfusion(d, r, 0.9, rng)
        x = rng.normal(size=(n, d))
        y = rng.normal(size=(n, d))
        cases.append((d, state, x, y))
    best = {d: float("inf") for d in dims}
    with threadpool_limits(limits=1):
        for d, state, x, y in cases:  # warm up caches and covariance state
            for _ in range(3):
                corrfusion_forward(state, x, y, train=True)
        for _ in range(repeats):
            for d, state, x, y in cases:
                t0 = time.perf_counter()
                corrfusion_forward(state, x, y, train=True)
                best[d] = min(best[d], time.perf_counter() - t0)
    return [(d, best[d]) for d in dims]
