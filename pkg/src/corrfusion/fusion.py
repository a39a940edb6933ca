"""Correlation-gated cross-temporal fusion.

The module projects both temporal branches to a narrower width, batch
normalises them, measures per-pair similarity as the row-wise Euclidean
distance of the normalised embeddings, converts it to a fusion gate
``w = 1 - tanh(distance)``, restores each branch to full width and adds the
gated restored embedding of the *other* branch:

    x_fused(k) = x(k) + w(k) * y_restored(k)
    y_fused(k) = y(k) + w(k) * x_restored(k)

Alongside, it maintains exponentially accumulated covariance estimates of
the normalised embeddings and exposes their decorrelation penalty (the sum
of absolute off-diagonal covariance entries). Everything has a hand-derived
backward, including the gradient of the gate with respect to both branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheError, DegenerateBatchError, ModeError, ShapeError
from .layers import (
    BatchNormCache,
    BatchNormLayer,
    DenseCache,
    DenseLayer,
    bn_backward,
    bn_forward,
    dense_backward,
    dense_forward,
    make_batchnorm,
    make_dense,
)
from .tensor import Matrix, row_l2_norms, scale_rows

# Below this distance the gate gradient direction (diff / distance) is
# undefined; the symmetric subgradient choice is zero.
DISTANCE_EPS = 1e-8


@dataclass
class CorrFusionState:
    """Parameters and accumulated covariances of the fusion module."""

    reduce_x: DenseLayer
    reduce_y: DenseLayer
    bn_x: BatchNormLayer
    bn_y: BatchNormLayer
    restore_x: DenseLayer
    restore_y: DenseLayer
    cov_xx: Matrix
    cov_yy: Matrix
    rho: float
    r: int
    initialized: bool = False

    @property
    def dim(self) -> int:
        return self.reduce_x.in_dim

    @property
    def reduced_dim(self) -> int:
        return self.reduce_x.out_dim


def init_corrfusion(dim: int, r: int, rho: float, rng: np.random.Generator,
                    activation: str = "relu", bn_momentum: float = 0.9,
                    bn_eps: float = 1e-5) -> CorrFusionState:
    if r < 1 or dim % r != 0:
        raise ValueError(f"r must divide the embedding width: d={dim}, r={r}")
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    k = dim // r
    return CorrFusionState(
        reduce_x=make_dense(dim, k, rng, activation),
        reduce_y=make_dense(dim, k, rng, activation),
        bn_x=make_batchnorm(k, bn_momentum, bn_eps),
        bn_y=make_batchnorm(k, bn_momentum, bn_eps),
        restore_x=make_dense(k, dim, rng, activation),
        restore_y=make_dense(k, dim, rng, activation),
        cov_xx=np.zeros((k, k)),
        cov_yy=np.zeros((k, k)),
        rho=rho,
        r=r,
    )


def instance_correlation(x_bn: Matrix, y_bn: Matrix) -> np.ndarray:
    """Per-pair distance: Euclidean norm of each row of ``x_bn - y_bn``."""
    if x_bn.shape != y_bn.shape:
        raise ShapeError(f"branch shapes differ: {x_bn.shape} vs {y_bn.shape}")
    return row_l2_norms(x_bn - y_bn)


def fusion_weights(ell: np.ndarray) -> np.ndarray:
    """Gate ``w = 1 - tanh(ell)``: 1 at distance 0, decaying towards 0."""
    ell = np.asarray(ell, dtype=np.float64)
    if np.any(ell < 0.0):
        raise ValueError("distances must be nonnegative")
    return 1.0 - np.tanh(ell)


def update_covariance(state: CorrFusionState, x_bn: Matrix, y_bn: Matrix) -> CorrFusionState:
    """Fold a batch into the accumulated covariances.

    The very first batch sets the estimate outright; later batches blend as
    ``rho * previous + (1 - rho) * batch``.
    """
    n = x_bn.shape[0]
    if n < 2:
        raise DegenerateBatchError(f"covariance update needs at least 2 rows, got {n}")
    batch_xx = x_bn.T @ x_bn
    batch_xx /= n - 1
    batch_yy = y_bn.T @ y_bn
    batch_yy /= n - 1
    if not state.initialized:
        state.cov_xx = batch_xx
        state.cov_yy = batch_yy
        state.initialized = True
    else:
        for cov, batch in ((state.cov_xx, batch_xx), (state.cov_yy, batch_yy)):
            cov *= state.rho
            batch *= 1.0 - state.rho
            cov += batch
    return state


def sdl_loss(cov: Matrix) -> float:
    """Sum of absolute off-diagonal entries of a square covariance matrix."""
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeError(f"covariance must be square, got {cov.shape}")
    a = np.abs(cov)
    return float(a.sum() - np.trace(a))


@dataclass
class ProjectionCache:
    state: CorrFusionState
    train: bool
    fc_x: DenseCache
    fc_y: DenseCache
    bnc_x: BatchNormCache
    bnc_y: BatchNormCache
    # Blend coefficient of the current batch inside the covariance update
    # (1 on the initialising batch, 1 - rho afterwards); None outside
    # training or when the update was skipped.
    cov_coeff: float | None
    sign_xx: Matrix | None
    sign_yy: Matrix | None
    n: int


def projection_forward(state: CorrFusionState, x: Matrix, y: Matrix, train: bool,
                       update_cov: bool = True) -> tuple[Matrix, Matrix, ProjectionCache]:
    """Reduce + batch-norm half of the module, shared by the unfused heads."""
    if x.shape != y.shape:
        raise ShapeError(f"branch shapes differ: {x.shape} vs {y.shape}")
    if x.shape[1] != state.dim:
        raise ShapeError(f"input {x.shape} does not fit module width {state.dim}")
    x_fc, fc_x = dense_forward(state.reduce_x, x)
    y_fc, fc_y = dense_forward(state.reduce_y, y)
    x_bn, bnc_x = bn_forward(state.bn_x, x_fc, train)
    y_bn, bnc_y = bn_forward(state.bn_y, y_fc, train)
    cov_coeff = None
    sign_xx = sign_yy = None
    if train and update_cov:
        cov_coeff = 1.0 if not state.initialized else 1.0 - state.rho
        update_covariance(state, x_bn, y_bn)
        sign_xx = np.sign(state.cov_xx)
        np.fill_diagonal(sign_xx, 0.0)
        sign_yy = np.sign(state.cov_yy)
        np.fill_diagonal(sign_yy, 0.0)
    cache = ProjectionCache(state, train, fc_x, fc_y, bnc_x, bnc_y,
                            cov_coeff, sign_xx, sign_yy, x.shape[0])
    return x_bn, y_bn, cache


def projection_backward(state: CorrFusionState, cache: ProjectionCache,
                        g_x_bn: Matrix, g_y_bn: Matrix,
                        sdl_weight: float,
                        x_bn: Matrix, y_bn: Matrix):
    """Push gradients on the normalised embeddings back to the inputs.

    Adds the decorrelation-penalty path (weight ``sdl_weight``), then chains
    through batch norm and the reduction layers. Returns
    ``(d_x, d_y, grads)`` with ``grads`` keyed by parameter name.
    """
    if cache.state is not state:
        raise CacheError("cache does not belong to this fusion state")
    if not cache.train:
        raise CacheError("backward requires a cache from a training-mode forward")
    if sdl_weight != 0.0 and cache.cov_coeff is not None:
        # d/dZ of sum|cov_offdiag| with the pre-batch estimate held constant:
        # 2 * coeff / (n - 1) * Z @ sign(cov), diagonal signs zeroed.
        factor = sdl_weight * 2.0 * cache.cov_coeff / (cache.n - 1)
        g_x_bn = g_x_bn + factor * (x_bn @ cache.sign_xx)
        g_y_bn = g_y_bn + factor * (y_bn @ cache.sign_yy)
    d_x_fc, d_gamma_x, d_beta_x = bn_backward(cache.bnc_x, g_x_bn)
    d_y_fc, d_gamma_y, d_beta_y = bn_backward(cache.bnc_y, g_y_bn)
    d_x, d_w_fx, d_b_fx = dense_backward(cache.fc_x, d_x_fc)
    d_y, d_w_fy, d_b_fy = dense_backward(cache.fc_y, d_y_fc)
    grads = {
        "reduce_x.W": d_w_fx, "reduce_x.b": d_b_fx,
        "reduce_y.W": d_w_fy, "reduce_y.b": d_b_fy,
        "bn_x.gamma": d_gamma_x, "bn_x.beta": d_beta_x,
        "bn_y.gamma": d_gamma_y, "bn_y.beta": d_beta_y,
    }
    return d_x, d_y, grads


@dataclass
class FusionCache:
    proj: ProjectionCache
    re_x: DenseCache
    re_y: DenseCache
    diff: Matrix  # x_bn - y_bn


@dataclass
class FusionOutput:
    """Per-batch forward artifacts of the fusion module."""

    x_phi: Matrix
    y_phi: Matrix
    ell: np.ndarray
    w: np.ndarray
    x_bn: Matrix
    y_bn: Matrix
    x_re: Matrix
    y_re: Matrix
    sdl_x: float
    sdl_y: float
    cache: FusionCache


def corrfusion_forward(state: CorrFusionState, x: Matrix, y: Matrix,
                       train: bool) -> FusionOutput:
    """Full fusion forward pass.

    Training mode folds the batch into the accumulated covariances and uses
    batch statistics inside batch norm; inference freezes both and relies on
    the running statistics. The gate and fusion are computed in either mode.
    """
    x_bn, y_bn, proj = projection_forward(state, x, y, train)
    diff = x_bn - y_bn
    ell = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    w = 1.0 - np.tanh(ell)
    x_re, re_x = dense_forward(state.restore_x, x_bn)
    y_re, re_y = dense_forward(state.restore_y, y_bn)
    x_phi = y_re * w[:, np.newaxis]
    x_phi += x
    y_phi = x_re * w[:, np.newaxis]
    y_phi += y
    sdl_x = sdl_loss(state.cov_xx)
    sdl_y = sdl_loss(state.cov_yy)
    cache = FusionCache(proj, re_x, re_y, diff)
    return FusionOutput(x_phi, y_phi, ell, w, x_bn, y_bn, x_re, y_re,
                        sdl_x, sdl_y, cache)


def corrfusion_backward(state: CorrFusionState, output: FusionOutput,
                        d_x_phi: Matrix, d_y_phi: Matrix,
                        sdl_weight: float = 1.0,
                        d_x_bn: Matrix | None = None,
                        d_y_bn: Matrix | None = None,
                        detach_weights: bool = False):
    """Backward pass of :func:`corrfusion_forward`.

    ``d_x_phi`` / ``d_y_phi`` are the upstream gradients on the fused
    outputs. ``d_x_bn`` / ``d_y_bn`` let the caller inject extra gradients
    on the normalised embeddings (the masked correlation loss lives there).
    ``sdl_weight`` scales the decorrelation-penalty path; ``detach_weights``
    drops the gradient through the gate, treating ``w`` as a constant.

    Returns ``(d_x, d_y, grads)`` where ``grads`` maps fusion parameter
    names to gradient arrays.
    """
    cache = output.cache
    if cache.proj.state is not state:
        raise CacheError("cache does not belong to this fusion state")
    if not cache.proj.train:
        raise CacheError("backward requires a cache from a training-mode forward")
    if d_x_phi.shape != output.x_phi.shape or d_y_phi.shape != output.y_phi.shape:
        raise ShapeError("upstream gradient shapes do not match the fused outputs")

    w = output.w
    g_x_bn = np.zeros_like(output.x_bn) if d_x_bn is None else d_x_bn.copy()
    g_y_bn = np.zeros_like(output.y_bn) if d_y_bn is None else d_y_bn.copy()

    # Fusion addition: x_phi(k) = x(k) + w(k) y_re(k) and its dual.
    d_y_re = scale_rows(d_x_phi, w)
    d_x_re = scale_rows(d_y_phi, w)

    if not detach_weights:
        # d total / d w(k), gathered from both fused outputs.
        d_w = (d_x_phi * output.y_re).sum(axis=1) + (d_y_phi * output.x_re).sum(axis=1)
        # w = 1 - tanh(ell)  =>  d w / d ell = tanh(ell)^2 - 1.
        d_ell = d_w * (np.tanh(output.ell) ** 2 - 1.0)
        # ell(k) = |x_bn(k) - y_bn(k)|  =>  d ell / d x_bn(k) = diff(k) / ell(k),
        # zeroed below DISTANCE_EPS where the direction is undefined.
        safe = output.ell >= DISTANCE_EPS
        coeff = np.where(safe, d_ell / np.where(safe, output.ell, 1.0), 0.0)
        g_diff = scale_rows(cache.diff, coeff)
        g_x_bn += g_diff
        g_y_bn -= g_diff

    # Restore (dimensionality-increasing) layers, activation derivative included.
    d_x_bn_re, d_w_rx, d_b_rx = dense_backward(cache.re_x, d_x_re)
    d_y_bn_re, d_w_ry, d_b_ry = dense_backward(cache.re_y, d_y_re)
    g_x_bn += d_x_bn_re
    g_y_bn += d_y_bn_re

    d_x, d_y, grads = projection_backward(state, cache.proj, g_x_bn, g_y_bn,
                                          sdl_weight, output.x_bn, output.y_bn)
    grads.update({
        "restore_x.W": d_w_rx, "restore_x.b": d_b_rx,
        "restore_y.W": d_w_ry, "restore_y.b": d_b_ry,
    })
    # Direct path of the fusion addition.
    d_x = d_x + d_x_phi
    d_y = d_y + d_y_phi
    return d_x, d_y, grads


def dcca_objective(x_bn: Matrix, y_bn: Matrix) -> tuple[float, float]:
    """Diagnostic canonical-correlation quantities for two embeddings.

    Returns ``(frobenius_value, trace_corr)``: half the Frobenius norm of
    the difference, and the trace of the cross product ``x_bn y_bn^T``. No
    whitening constraint is enforced; these are monitoring values only.
    """
    if x_bn.shape != y_bn.shape:
        raise ShapeError(f"branch shapes differ: {x_bn.shape} vs {y_bn.shape}")
    diff = x_bn - y_bn
    frobenius_value = 0.5 * float(np.sqrt((diff * diff).sum()))
    trace_corr = float((x_bn * y_bn).sum())
    return frobenius_value, trace_corr


def soft_dcca_loss(x_bn: Matrix, y_bn: Matrix, state: CorrFusionState) -> float:
    """Distance plus decorrelation objective of the soft correlation head.

    ``|x_bn - y_bn|_F + sdl(cov_xx) + sdl(cov_yy)`` using the accumulated
    covariances held by ``state``.
    """
    if x_bn.shape != y_bn.shape:
        raise ShapeError(f"branch shapes differ: {x_bn.shape} vs {y_bn.shape}")
    if not state.initialized:
        raise ModeError("covariances are uninitialised; run a training forward first")
    diff = x_bn - y_bn
    dist = float(np.sqrt((diff * diff).sum()))
    return dist + sdl_loss(state.cov_xx) + sdl_loss(state.cov_yy)
