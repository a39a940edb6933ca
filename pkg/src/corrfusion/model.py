"""Two-branch bi-temporal classifier with selectable head.

Heads:

* ``corrfusion``  fuse the branches through the correlation gate, classify
  the fused embeddings, and train with the masked correlation loss plus the
  decorrelation penalties.
* ``softdcca``    classify the raw branch embeddings; regularise with the
  unmasked embedding distance plus the decorrelation penalties.
* ``dcca``        classify the raw branch embeddings; the canonical
  Frobenius objective of a fixed random projection is recorded per batch
  but never optimised (its reliable minibatch optimisation is exactly what
  the other heads replace).
* ``nofusion``    plain independent per-time classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fusion import (
    CorrFusionState,
    corrfusion_backward,
    corrfusion_forward,
    dcca_objective,
    init_corrfusion,
    projection_backward,
    projection_forward,
    sdl_loss,
)
from .layers import (
    Backbone,
    DenseLayer,
    backbone_backward,
    backbone_forward,
    bn_forward,
    dense_backward,
    dense_forward,
    make_backbone,
    make_dense,
    softmax_ce,
)
from .objective import LossBreakdown, LossWeights, change_mask, corr_loss, l2_penalty, total_loss
from .tensor import Matrix

HEADS = ("corrfusion", "softdcca", "dcca", "nofusion")


@dataclass
class TwoBranchModel:
    backbone_x: Backbone
    backbone_y: Backbone
    fusion: CorrFusionState | None
    cls_x: DenseLayer
    cls_y: DenseLayer
    head: str
    n_classes: int
    detach_weights: bool = False

    @property
    def embed_dim(self) -> int:
        return self.backbone_x.output_dim


def build_model(d_in: int, hidden: list[int], embed_dim: int, r: int, rho: float,
                n_classes: int, head: str, rng: np.random.Generator,
                bn_momentum: float = 0.9, bn_eps: float = 1e-5,
                detach_weights: bool = False) -> TwoBranchModel:
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
    backbone_x = make_backbone(d_in, hidden, embed_dim, rng)
    backbone_y = make_backbone(d_in, hidden, embed_dim, rng)
    fusion = None
    if head != "nofusion":
        fusion = init_corrfusion(embed_dim, r, rho, rng, "relu", bn_momentum, bn_eps)
    cls_x = make_dense(embed_dim, n_classes, rng, "identity")
    cls_y = make_dense(embed_dim, n_classes, rng, "identity")
    return TwoBranchModel(backbone_x, backbone_y, fusion, cls_x, cls_y,
                          head, n_classes, detach_weights)


def trainable_params(model: TwoBranchModel) -> dict[str, np.ndarray]:
    """Name -> array view of every parameter the optimizer may update.

    The arrays are the live model arrays; in-place updates take effect
    directly. The frozen projection of the ``dcca`` head is excluded.
    """
    params: dict[str, np.ndarray] = {}
    for branch, bb in (("backbone_x", model.backbone_x), ("backbone_y", model.backbone_y)):
        for i, layer in enumerate(bb.layers):
            params[f"{branch}.{i}.W"] = layer.W
            params[f"{branch}.{i}.b"] = layer.b
    if model.fusion is not None and model.head in ("corrfusion", "softdcca"):
        f = model.fusion
        params["fusion.reduce_x.W"] = f.reduce_x.W
        params["fusion.reduce_x.b"] = f.reduce_x.b
        params["fusion.reduce_y.W"] = f.reduce_y.W
        params["fusion.reduce_y.b"] = f.reduce_y.b
        params["fusion.bn_x.gamma"] = f.bn_x.gamma
        params["fusion.bn_x.beta"] = f.bn_x.beta
        params["fusion.bn_y.gamma"] = f.bn_y.gamma
        params["fusion.bn_y.beta"] = f.bn_y.beta
        if model.head == "corrfusion":
            params["fusion.restore_x.W"] = f.restore_x.W
            params["fusion.restore_x.b"] = f.restore_x.b
            params["fusion.restore_y.W"] = f.restore_y.W
            params["fusion.restore_y.b"] = f.restore_y.b
    params["cls_x.W"] = model.cls_x.W
    params["cls_x.b"] = model.cls_x.b
    params["cls_y.W"] = model.cls_y.W
    params["cls_y.b"] = model.cls_y.b
    return params


def state_arrays(model: TwoBranchModel) -> dict[str, np.ndarray]:
    """Every array of the model, including frozen parameters, batch-norm
    running statistics and the accumulated covariances."""
    arrays: dict[str, np.ndarray] = {}
    for branch, bb in (("backbone_x", model.backbone_x), ("backbone_y", model.backbone_y)):
        for i, layer in enumerate(bb.layers):
            arrays[f"{branch}.{i}.W"] = layer.W
            arrays[f"{branch}.{i}.b"] = layer.b
    if model.fusion is not None:
        f = model.fusion
        for name, layer in (("reduce_x", f.reduce_x), ("reduce_y", f.reduce_y),
                            ("restore_x", f.restore_x), ("restore_y", f.restore_y)):
            arrays[f"fusion.{name}.W"] = layer.W
            arrays[f"fusion.{name}.b"] = layer.b
        for name, bn in (("bn_x", f.bn_x), ("bn_y", f.bn_y)):
            arrays[f"fusion.{name}.gamma"] = bn.gamma
            arrays[f"fusion.{name}.beta"] = bn.beta
            arrays[f"fusion.{name}.running_mean"] = bn.running_mean
            arrays[f"fusion.{name}.running_var"] = bn.running_var
        arrays["fusion.cov_xx"] = f.cov_xx
        arrays["fusion.cov_yy"] = f.cov_yy
    arrays["cls_x.W"] = model.cls_x.W
    arrays["cls_x.b"] = model.cls_x.b
    arrays["cls_y.W"] = model.cls_y.W
    arrays["cls_y.b"] = model.cls_y.b
    return arrays


def snapshot_state(model: TwoBranchModel) -> dict:
    snap = {name: arr.copy() for name, arr in state_arrays(model).items()}
    snap["__cov_initialized__"] = model.fusion.initialized if model.fusion else False
    return snap


def restore_state(model: TwoBranchModel, snap: dict) -> None:
    live = state_arrays(model)
    for name, arr in live.items():
        np.copyto(arr, snap[name])
    if model.fusion is not None:
        model.fusion.initialized = snap["__cov_initialized__"]


def _weight_matrices(params: dict[str, np.ndarray]):
    return [arr for name, arr in params.items() if name.endswith(".W")]


def forward_backward(model: TwoBranchModel, x1: Matrix, x2: Matrix,
                     l1: np.ndarray, l2: np.ndarray,
                     weights: LossWeights | None = None,
                     l2_weight: float = 0.0,
                     train: bool = True):
    """One full training step's math: loss breakdown plus exact gradients.

    Returns ``(breakdown, grads, extras)``. ``grads`` is keyed like
    :func:`trainable_params` and excludes the L2 term (the optimizer adds
    ``l2_weight * W`` itself); ``extras`` carries the input gradients, class
    probabilities and embeddings for diagnostics.
    """
    weights = weights if weights is not None else LossWeights()
    feat_x, bb_cache_x = backbone_forward(model.backbone_x, x1)
    feat_y, bb_cache_y = backbone_forward(model.backbone_y, x2)

    corr_val = 0.0
    sdl_x = sdl_y = 0.0
    d_corr_x = d_corr_y = None
    fusion_out = None
    proj = None
    x_bn = y_bn = None
    eff_weights = weights

    if model.head == "corrfusion":
        fusion_out = corrfusion_forward(model.fusion, feat_x, feat_y, train)
        cls_in_x, cls_in_y = fusion_out.x_phi, fusion_out.y_phi
        x_bn, y_bn = fusion_out.x_bn, fusion_out.y_bn
        sdl_x, sdl_y = fusion_out.sdl_x, fusion_out.sdl_y
        xi = change_mask(l1, l2)
        corr_val, d_corr_x, d_corr_y = corr_loss(x_bn, y_bn, xi)
    elif model.head == "softdcca":
        x_bn, y_bn, proj = projection_forward(model.fusion, feat_x, feat_y, train)
        cls_in_x, cls_in_y = feat_x, feat_y
        sdl_x = sdl_loss(model.fusion.cov_xx)
        sdl_y = sdl_loss(model.fusion.cov_yy)
        # Unmasked embedding distance: the correlation loss with an all-ones mask.
        ones = np.ones(x1.shape[0], dtype=np.int64)
        corr_val, d_corr_x, d_corr_y = corr_loss(x_bn, y_bn, ones)
    elif model.head == "dcca":
        x_bn, y_bn, proj = projection_forward(model.fusion, feat_x, feat_y, train,
                                              update_cov=False)
        cls_in_x, cls_in_y = feat_x, feat_y
        corr_val, _ = dcca_objective(x_bn, y_bn)
        eff_weights = replace(weights, corr=0.0)  # monitored, never optimised
    else:  # nofusion
        cls_in_x, cls_in_y = feat_x, feat_y

    logits_x, cls_cache_x = dense_forward(model.cls_x, cls_in_x)
    logits_y, cls_cache_y = dense_forward(model.cls_y, cls_in_y)
    ce_x, d_logits_x, probs_x = softmax_ce(logits_x, l1)
    ce_y, d_logits_y, probs_y = softmax_ce(logits_y, l2)

    params = trainable_params(model)
    l2_reg = l2_penalty(_weight_matrices(params), l2_weight)
    breakdown = total_loss(ce_x, ce_y, corr_val, sdl_x, sdl_y, l2_reg, eff_weights)

    # ---- backward ----
    d_cls_in_x, d_w_cx, d_b_cx = dense_backward(cls_cache_x, eff_weights.ce_x * d_logits_x)
    d_cls_in_y, d_w_cy, d_b_cy = dense_backward(cls_cache_y, eff_weights.ce_y * d_logits_y)
    grads: dict[str, np.ndarray] = {
        "cls_x.W": d_w_cx, "cls_x.b": d_b_cx,
        "cls_y.W": d_w_cy, "cls_y.b": d_b_cy,
    }

    if model.head == "corrfusion":
        d_feat_x, d_feat_y, fusion_grads = corrfusion_backward(
            model.fusion, fusion_out, d_cls_in_x, d_cls_in_y,
            sdl_weight=eff_weights.sdl,
            d_x_bn=eff_weights.corr * d_corr_x,
            d_y_bn=eff_weights.corr * d_corr_y,
            detach_weights=model.detach_weights,
        )
        grads.update({f"fusion.{k}": v for k, v in fusion_grads.items()})
    elif model.head == "softdcca":
        d_px, d_py, proj_grads = projection_backward(
            model.fusion, proj,
            eff_weights.corr * d_corr_x, eff_weights.corr * d_corr_y,
            sdl_weight=eff_weights.sdl, x_bn=x_bn, y_bn=y_bn,
        )
        grads.update({f"fusion.{k}": v for k, v in proj_grads.items()})
        d_feat_x = d_cls_in_x + d_px
        d_feat_y = d_cls_in_y + d_py
    else:  # dcca (frozen projection) and nofusion
        d_feat_x = d_cls_in_x
        d_feat_y = d_cls_in_y

    d_x1, bb_grads_x = backbone_backward(bb_cache_x, d_feat_x)
    d_x2, bb_grads_y = backbone_backward(bb_cache_y, d_feat_y)
    for branch, bb_grads in (("backbone_x", bb_grads_x), ("backbone_y", bb_grads_y)):
        for i, (d_w, d_b) in enumerate(bb_grads):
            grads[f"{branch}.{i}.W"] = d_w
            grads[f"{branch}.{i}.b"] = d_b

    extras = {
        "d_x1": d_x1, "d_x2": d_x2,
        "probs_x": probs_x, "probs_y": probs_y,
        "x_bn": x_bn, "y_bn": y_bn,
    }
    return breakdown, grads, extras


def predict(model: TwoBranchModel, x1: Matrix, x2: Matrix) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode class predictions for both times."""
    feat_x, _ = backbone_forward(model.backbone_x, x1)
    feat_y, _ = backbone_forward(model.backbone_y, x2)
    if model.head == "corrfusion":
        out = corrfusion_forward(model.fusion, feat_x, feat_y, train=False)
        feat_x, feat_y = out.x_phi, out.y_phi
    logits_x, _ = dense_forward(model.cls_x, feat_x)
    logits_y, _ = dense_forward(model.cls_y, feat_y)
    return logits_x.argmax(axis=1), logits_y.argmax(axis=1)


def project_embeddings(model: TwoBranchModel, x1: Matrix, x2: Matrix) -> tuple[Matrix, Matrix]:
    """Inference-mode normalised embeddings of the projection stage."""
    if model.fusion is None:
        raise ValueError(f"head {model.head!r} has no projection stage")
    feat_x, _ = backbone_forward(model.backbone_x, x1)
    feat_y, _ = backbone_forward(model.backbone_y, x2)
    x_fc, _ = dense_forward(model.fusion.reduce_x, feat_x)
    y_fc, _ = dense_forward(model.fusion.reduce_y, feat_y)
    x_bn, _ = bn_forward(model.fusion.bn_x, x_fc, train=False)
    y_bn, _ = bn_forward(model.fusion.bn_y, y_fc, train=False)
    return x_bn, y_bn
