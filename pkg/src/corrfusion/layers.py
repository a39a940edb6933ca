"""Fully connected, batch-norm and softmax building blocks.

Each layer is a small parameter container plus a ``*_forward`` /
``*_backward`` pair of pure functions. Forward returns the output together
with a cache; backward consumes that cache and the upstream gradient and
returns exact gradients of the forward map. Nothing here differentiates
automatically: every gradient is hand-derived and checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, ModeError, ShapeError
from .tensor import Matrix, as_matrix

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    """Affine map ``X W + b`` followed by an elementwise activation."""

    W: Matrix
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.W = as_matrix(self.W)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.W.shape[1],):
            raise ShapeError(f"bias shape {self.b.shape} does not fit W {self.W.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class DenseCache:
    layer: DenseLayer
    x: Matrix
    pre: Matrix  # pre-activation X W + b


def dense_forward(layer: DenseLayer, x: Matrix) -> tuple[Matrix, DenseCache]:
    if x.shape[1] != layer.in_dim:
        raise ShapeError(f"input {x.shape} does not fit weights {layer.W.shape}")
    pre = x @ layer.W
    pre += layer.b  # fresh gemm output, safe to update in place
    out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return out, DenseCache(layer, x, pre)


def dense_backward(cache: DenseCache, d_out: Matrix) -> tuple[Matrix, Matrix, np.ndarray]:
    """Gradients (d_x, d_W, d_b) of the dense forward map.

    The ReLU derivative at a pre-activation of exactly 0 is taken as 0.
    """
    if d_out.shape != cache.pre.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} does not match output {cache.pre.shape}")
    if cache.layer.activation == "relu":
        d_pre = np.where(cache.pre > 0.0, d_out, 0.0)
    else:
        d_pre = d_out
    d_w = cache.x.T @ d_pre
    d_b = d_pre.sum(axis=0)
    d_x = d_pre @ cache.layer.W.T
    return d_x, d_w, d_b


@dataclass
class BatchNormLayer:
    """Per-column standardisation with learned scale/shift.

    Training uses the batch mean and biased (population) variance and folds
    them into the running statistics; inference uses the running statistics
    and leaves the layer untouched.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if np.any(self.running_var < 0.0):
            raise ValueError("running variance must be nonnegative")

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]


def make_batchnorm(dim: int, momentum: float = 0.9, eps: float = 1e-5) -> BatchNormLayer:
    return BatchNormLayer(
        gamma=np.ones(dim),
        beta=np.zeros(dim),
        running_mean=np.zeros(dim),
        running_var=np.ones(dim),
        momentum=momentum,
        eps=eps,
    )


@dataclass
class BatchNormCache:
    layer: BatchNormLayer
    train: bool
    x: Matrix
    mean: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def bn_forward(layer: BatchNormLayer, x: Matrix, train: bool) -> tuple[Matrix, BatchNormCache]:
    if x.shape[1] != layer.dim:
        raise ShapeError(f"input {x.shape} does not fit batch-norm of dim {layer.dim}")
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatchError(
                f"batch normalisation needs at least 2 rows in training, got {x.shape[0]}"
            )
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # population variance
        m = layer.momentum
        layer.running_mean = m * layer.running_mean + (1.0 - m) * mean
        layer.running_var = m * layer.running_var + (1.0 - m) * var
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    # out = ((x - mean) * inv_std) * gamma + beta, folded to two passes.
    scale = inv_std * layer.gamma
    out = x * scale
    out += layer.beta - mean * scale
    return out, BatchNormCache(layer, train, x, mean, inv_std, layer.gamma)


def bn_backward(cache: BatchNormCache, d_out: Matrix) -> tuple[Matrix, np.ndarray, np.ndarray]:
    """Gradients (d_x, d_gamma, d_beta) of the training-mode forward map.

    Includes the dependence of the batch mean and variance on the input.
    """
    if not cache.train:
        raise ModeError("backward through batch norm requires a training-mode cache")
    if d_out.shape != cache.x.shape:
        raise ShapeError(f"upstream gradient {d_out.shape} does not match output {cache.x.shape}")
    n = d_out.shape[0]
    x_hat = (cache.x - cache.mean) * cache.inv_std
    d_beta = d_out.sum(axis=0)
    d_gamma = (d_out * x_hat).sum(axis=0)
    d_xhat = d_out * cache.gamma
    d_x = (cache.inv_std / n) * (
        n * d_xhat
        - d_xhat.sum(axis=0)
        - x_hat * (d_xhat * x_hat).sum(axis=0)
    )
    return d_x, d_gamma, d_beta


def softmax_ce(logits: Matrix, labels: np.ndarray) -> tuple[float, Matrix, Matrix]:
    """Mean cross entropy of row-wise softmax against integer class labels.

    Returns ``(loss, d_logits, probs)`` where ``d_logits`` is the gradient of
    the mean loss, i.e. ``(probs - onehot) / n``.
    """
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels of shape {labels.shape} do not fit logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, np.newaxis]
    loss = float(-log_probs[np.arange(n), labels].mean())
    probs = np.exp(log_probs)
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits, probs


def xavier_init(in_dim: int, out_dim: int, rng: np.random.Generator) -> Matrix:
    """Uniform Glorot initialisation in ``+-sqrt(6 / (in_dim + out_dim))``."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("dimensions must be at least 1")
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(in_dim, out_dim))


def make_dense(in_dim: int, out_dim: int, rng: np.random.Generator,
               activation: str = "relu") -> DenseLayer:
    return DenseLayer(W=xavier_init(in_dim, out_dim, rng),
                      b=np.zeros(out_dim), activation=activation)


@dataclass
class Backbone:
    """Stack of dense layers mapping raw features to the fusion width."""

    layers: list[DenseLayer] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


def make_backbone(in_dim: int, hidden: list[int], out_dim: int,
                  rng: np.random.Generator) -> Backbone:
    dims = [in_dim, *hidden, out_dim]
    layers = [make_dense(dims[i], dims[i + 1], rng, "relu") for i in range(len(dims) - 1)]
    return Backbone(layers)


def backbone_forward(bb: Backbone, x: Matrix) -> tuple[Matrix, list[DenseCache]]:
    caches = []
    out = x
    for layer in bb.layers:
        out, cache = dense_forward(layer, out)
        caches.append(cache)
    return out, caches


def backbone_backward(caches: list[DenseCache],
                      d_out: Matrix) -> tuple[Matrix, list[tuple[Matrix, np.ndarray]]]:
    """Returns the input gradient and per-layer ``(d_W, d_b)`` pairs in layer order."""
    grads: list[tuple[Matrix, np.ndarray]] = [None] * len(caches)  # type: ignore[list-item]
    d = d_out
    for i in range(len(caches) - 1, -1, -1):
        d, d_w, d_b = dense_backward(caches[i], d)
        grads[i] = (d_w, d_b)
    return d, grads
