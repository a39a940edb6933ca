"""Total training loss assembly.

The loss combines per-time cross entropy, a correlation term restricted to
pairs whose two labels agree, the decorrelation penalties of both branches
and an L2 penalty on weight matrices. Each component carries its own
weight; the breakdown keeps components and weights side by side so the
recorded total always equals the weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Matrix

# Below this value the square root in the correlation loss is treated as
# non-differentiable and its gradient set to zero.
CORR_EPS = 1e-8


def change_mask(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    """Indicator vector: 1 where the two labels of a pair agree, else 0."""
    l1 = np.asarray(l1)
    l2 = np.asarray(l2)
    if l1.shape != l2.shape or l1.ndim != 1:
        raise ShapeError(f"label vectors must share one length, got {l1.shape} vs {l2.shape}")
    return (l1 == l2).astype(np.int64)


def corr_loss(x_bn: Matrix, y_bn: Matrix, xi: np.ndarray):
    """Root of the masked sum of squared pair distances, with gradients.

    ``value = sqrt(sum_k xi(k) * |x_bn(k) - y_bn(k)|^2)``. The gradients
    with respect to both embeddings are returned alongside; they are zero
    when the value sits below ``CORR_EPS`` (the root is not differentiable
    there).
    """
    if x_bn.shape != y_bn.shape:
        raise ShapeError(f"branch shapes differ: {x_bn.shape} vs {y_bn.shape}")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (x_bn.shape[0],):
        raise ShapeError(f"mask of shape {xi.shape} does not fit {x_bn.shape[0]} rows")
    diff = x_bn - y_bn
    value = float(np.sqrt((xi * (diff * diff).sum(axis=1)).sum()))
    if value < CORR_EPS:
        zero = np.zeros_like(x_bn)
        return value, zero, zero.copy()
    d_x = (xi[:, np.newaxis] * diff) / value
    return value, d_x, -d_x


@dataclass
class LossWeights:
    ce_x: float = 1.0
    ce_y: float = 1.0
    corr: float = 1.0
    sdl: float = 1.0


@dataclass
class LossBreakdown:
    ce_x: float
    ce_y: float
    corr: float
    sdl_x: float
    sdl_y: float
    l2_reg: float
    total: float
    weights: LossWeights = field(default_factory=LossWeights)


def l2_penalty(weight_matrices, l2_weight: float) -> float:
    """``0.5 * l2_weight * sum of squared weight entries`` (biases excluded)."""
    return 0.5 * l2_weight * float(sum((w * w).sum() for w in weight_matrices))


def total_loss(ce_x: float, ce_y: float, corr: float, sdl_x: float, sdl_y: float,
               l2_reg: float, weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted sum of the loss components.

    ``l2_reg`` arrives pre-weighted (its coefficient is folded in by
    :func:`l2_penalty`); the other terms are scaled here.
    """
    w = weights if weights is not None else LossWeights()
    total = (w.ce_x * ce_x + w.ce_y * ce_y + w.corr * corr
             + w.sdl * (sdl_x + sdl_y) + l2_reg)
    return LossBreakdown(ce_x, ce_y, corr, sdl_x, sdl_y, l2_reg, total, w)
