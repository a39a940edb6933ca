"""Evaluation metrics for bi-temporal classification and change detection.

"Changed" means the pair's two labels differ; it is the positive class of
the binary confusion counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _checked(*vectors):
    arrs = [np.asarray(v) for v in vectors]
    n = arrs[0].shape[0]
    for a in arrs:
        if a.ndim != 1 or a.shape[0] != n:
            raise ShapeError(f"label vectors must share one length, got shapes "
                             f"{[a.shape for a in arrs]}")
    return arrs


def oa_metrics(p1, p2, l1, l2) -> tuple[float, float, float, float]:
    """Overall accuracies (time-1, time-2, binary change, transition).

    * time-1 / time-2: fraction of correct labels at each time
    * binary: fraction of pairs whose predicted change/no-change flag
      matches the true flag
    * transition: fraction of pairs correct at both times
    """
    p1, p2, l1, l2 = _checked(p1, p2, l1, l2)
    if p1.shape[0] < 1:
        raise ShapeError("need at least one sample")
    oa_t1 = float(np.mean(p1 == l1))
    oa_t2 = float(np.mean(p2 == l2))
    oa_bi = float(np.mean((p1 == p2) == (l1 == l2)))
    oa_tr = float(np.mean((p1 == l1) & (p2 == l2)))
    return oa_t1, oa_t2, oa_bi, oa_tr


def confusion_matrix(pred, labels, n_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    pred, labels = _checked(pred, labels)
    _check_range(pred, n_classes)
    _check_range(labels, n_classes)
    flat = labels * n_classes + pred
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def transition_matrix(a, b, n_classes: int) -> np.ndarray:
    """Counts of pairs by (time-1 class, time-2 class)."""
    a, b = _checked(a, b)
    _check_range(a, n_classes)
    _check_range(b, n_classes)
    flat = a * n_classes + b
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def change_confusion(p1, p2, l1, l2) -> tuple[int, int, int, int]:
    """Binary change-detection counts ``(tp, fn, fp, tn)``.

    A pair is predicted changed when its two predicted labels differ, and
    truly changed when its two true labels differ.
    """
    p1, p2, l1, l2 = _checked(p1, p2, l1, l2)
    true_ch = l1 != l2
    pred_ch = p1 != p2
    tp = int(np.sum(true_ch & pred_ch))
    fn = int(np.sum(true_ch & ~pred_ch))
    fp = int(np.sum(~true_ch & pred_ch))
    tn = int(np.sum(~true_ch & ~pred_ch))
    return tp, fn, fp, tn


def _check_range(v: np.ndarray, n_classes: int) -> None:
    if v.size and (v.min() < 0 or v.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{v.min()}, {v.max()}]")


def param_count(d: int, r: int) -> int:
    """Parameter count of the fusion module at width ``d`` and ratio ``r``.

    Per branch: reduction weights and bias, batch-norm scale and shift,
    restore weights and bias; doubled for the two branches.
    """
    if r < 1 or d % r != 0:
        raise ValueError(f"r must divide d: d={d}, r={r}")
    k = d // r
    per_branch = (d * k + k) + 2 * k + (k * d + d)
    return 2 * per_branch


@dataclass
class EvalReport:
    """Full evaluation result on one split."""

    oa_t1: float
    oa_t2: float
    oa_bi: float
    oa_tr: float
    confusion_t1: np.ndarray
    confusion_t2: np.ndarray
    transition_pred: np.ndarray
    transition_true: np.ndarray
    tp: int
    fn: int
    fp: int
    tn: int

    def to_dict(self) -> dict:
        return {
            "oa_t1": self.oa_t1,
            "oa_t2": self.oa_t2,
            "oa_bi": self.oa_bi,
            "oa_tr": self.oa_tr,
            "confusion_t1": self.confusion_t1.tolist(),
            "confusion_t2": self.confusion_t2.tolist(),
            "transition_pred": self.transition_pred.tolist(),
            "transition_true": self.transition_true.tolist(),
            "tp": self.tp,
            "fn": self.fn,
            "fp": self.fp,
            "tn": self.tn,
        }


def build_report(p1, p2, l1, l2, n_classes: int) -> EvalReport:
    oa_t1, oa_t2, oa_bi, oa_tr = oa_metrics(p1, p2, l1, l2)
    tp, fn, fp, tn = change_confusion(p1, p2, l1, l2)
    return EvalReport(
        oa_t1=oa_t1, oa_t2=oa_t2, oa_bi=oa_bi, oa_tr=oa_tr,
        confusion_t1=confusion_matrix(p1, l1, n_classes),
        confusion_t2=confusion_matrix(p2, l2, n_classes),
        transition_pred=transition_matrix(p1, p2, n_classes),
        transition_true=transition_matrix(l1, l2, n_classes),
        tp=tp, fn=fn, fp=fp, tn=tn,
    )
