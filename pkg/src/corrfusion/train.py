"""Minibatch training with momentum SGD, evaluation and gradient checking.

Training is strictly sequential and deterministic for a given seed: the
accumulated covariances and batch-norm running statistics are order
dependent. Evaluation treats the model as immutable and may fan batches
out over threads (capped by the ``CORRFUSION_THREADS`` environment
variable) with an ordered reduction, so its results do not depend on the
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .dataset import PairedDataset, SplitIndices, batch_iter
from .errors import ShapeError, TrainingDiverged
from .metrics import EvalReport, build_report
from .model import (
    HEADS,
    TwoBranchModel,
    build_model,
    forward_backward,
    predict,
    restore_state,
    snapshot_state,
    trainable_params,
)
from .objective import LossWeights

EVAL_CHUNK = 512


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 30  # desk-scale default; full-scale runs use 100
    batch_size: int = 32
    l2_weight: float = 0.0001
    loss_weights: LossWeights = field(default_factory=LossWeights)
    r: int = 2
    rho: float = 0.9
    seed: int = 0
    head: str = "corrfusion"
    hidden: list[int] = field(default_factory=lambda: [128])
    embed_dim: int = 32
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    detach_weights: bool = False
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be at least 2, got {self.batch_size}")
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}, expected one of {HEADS}")
        if self.r < 1 or self.embed_dim % self.r != 0:
            raise ValueError(f"r must divide the embedding width: "
                             f"d={self.embed_dim}, r={self.r}")
        if self.epochs < 0 or self.seed < 0:
            raise ValueError("epochs and seed must be nonnegative")


def config_to_dict(config: TrainConfig) -> dict:
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, LossWeights):
            v = {"ce_x": v.ce_x, "ce_y": v.ce_y, "corr": v.corr, "sdl": v.sdl}
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if "loss_weights" in d and isinstance(d["loss_weights"], dict):
        d["loss_weights"] = LossWeights(**d["loss_weights"])
    if "ratios" in d:
        d["ratios"] = tuple(d["ratios"])
    if "hidden" in d and isinstance(d["hidden"], int):
        d["hidden"] = [d["hidden"]]
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**d)


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      velocity: dict[str, np.ndarray], lr: float, momentum: float,
                      l2_weight: float) -> None:
    """In-place momentum update: ``v <- momentum v + g'``, ``p <- p - lr v``.

    The quadratic penalty enters as ``g' = g + l2_weight * p`` on weight
    matrices (names ending ``.W``) only; biases and batch-norm parameters
    decay-free.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter "
                             f"{name} of shape {p.shape}")
        if l2_weight != 0.0 and name.endswith(".W"):
            g = g + l2_weight * p
        v = velocity[name]
        v *= momentum
        v += g
        p -= lr * v


def evaluate(model: TwoBranchModel, ds: PairedDataset, indices: np.ndarray,
             chunk: int = EVAL_CHUNK, threads: int | None = None) -> EvalReport:
    """Run the model on ``indices`` of ``ds`` and compute the full report."""
    indices = np.asarray(indices)
    if threads is None:
        threads = max(1, int(os.environ.get("CORRFUSION_THREADS", "1")))
    blocks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]

    def run(block):
        return predict(model, ds.x1[block], ds.x2[block])

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))  # ordered reduction
    else:
        results = [run(b) for b in blocks]
    p1 = np.concatenate([r[0] for r in results])
    p2 = np.concatenate([r[1] for r in results])
    return build_report(p1, p2, ds.l1[indices], ds.l2[indices], ds.n_classes)


@dataclass
class TrainResult:
    model: TwoBranchModel       # best-validation snapshot restored
    history: list[dict]
    best_epoch: int | None
    final_state: dict           # last-epoch arrays, for resuming/inspection


def train(config: TrainConfig, ds: PairedDataset, splits: SplitIndices) -> TrainResult:
    """Train a model on the train split, validating every epoch.

    Model selection keeps the epoch with the best validation transition
    accuracy; the returned model carries that snapshot while
    ``final_state`` preserves the last epoch. History records, one JSON-able
    dict per epoch, hold the mean loss components over the epoch's batches
    and the four validation accuracies.
    """
    if len(splits.train) == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    model = build_model(ds.d_in, config.hidden, config.embed_dim, config.r,
                        config.rho, ds.n_classes, config.head, rng,
                        config.bn_momentum, config.bn_eps, config.detach_weights)
    params = trainable_params(model)
    velocity = {name: np.zeros_like(p) for name, p in params.items()}

    history: list[dict] = []
    best_oa_tr = -1.0
    best_epoch: int | None = None
    best_snap = None

    for epoch in range(config.epochs):
        sums = {"ce_x": 0.0, "ce_y": 0.0, "corr": 0.0, "sdl": 0.0, "total": 0.0}
        n_batches = 0
        for b, idx in enumerate(batch_iter(splits.train, config.batch_size,
                                           config.seed, epoch)):
            bd, grads, _ = forward_backward(
                model, ds.x1[idx], ds.x2[idx], ds.l1[idx], ds.l2[idx],
                config.loss_weights, config.l2_weight, train=True)
            if not np.isfinite(bd.total):
                bad = [t for t in ("ce_x", "ce_y", "corr", "sdl_x", "sdl_y", "l2_reg")
                       if not np.isfinite(getattr(bd, t))]
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}; "
                    f"offending terms: {bad or ['total']}")
            sgd_momentum_step(params, grads, velocity, config.lr,
                              config.momentum, config.l2_weight)
            sums["ce_x"] += bd.ce_x
            sums["ce_y"] += bd.ce_y
            sums["corr"] += bd.corr
            sums["sdl"] += bd.sdl_x + bd.sdl_y
            sums["total"] += bd.total
            n_batches += 1
        report = evaluate(model, ds, splits.val)
        record = {"epoch": epoch}
        record.update({k: sums[k] / max(n_batches, 1)
                       for k in ("ce_x", "ce_y", "corr", "sdl", "total")})
        record.update({"val_oa_t1": report.oa_t1, "val_oa_t2": report.oa_t2,
                       "val_oa_bi": report.oa_bi, "val_oa_tr": report.oa_tr})
        history.append(record)
        if report.oa_tr > best_oa_tr:
            best_oa_tr = report.oa_tr
            best_epoch = epoch
            best_snap = snapshot_state(model)

    final_state = snapshot_state(model)
    if best_snap is not None:
        restore_state(model, best_snap)
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       final_state=final_state)


@dataclass
class GradCheckSpec:
    """Dimensions and head of the small model used for gradient checking."""

    n: int = 4
    d_in: int = 8
    embed_dim: int = 16
    r: int = 2
    n_classes: int = 3
    hidden: list[int] = field(default_factory=lambda: [16])
    rho: float = 0.9
    head: str = "corrfusion"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    detach_weights: bool = False


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_coordinate: str
    n_coordinates: int
    fd_step: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def gradcheck(spec: GradCheckSpec | None = None, seed: int = 17,
              fd_step: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare every analytic gradient against central finite differences.

    Covers all trainable parameters and both input matrices. The loss under
    test is the full data loss (cross entropies, correlation term,
    decorrelation penalties at their configured weights); the quadratic
    weight penalty is excluded because the optimizer applies it directly.
    A warm-up batch initialises the accumulated covariances so the check
    exercises the blended covariance path, and the state is rewound before
    every evaluation. Relative error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.

    The central difference resolves a gradient only down to roughly
    ``machine_eps * loss / (2 * fd_step)`` (about 1e-10 here), so a probe
    point where some coordinate's true gradient is far below that floor
    reports inflated relative error for that coordinate even when the
    analytic gradient is exact. The default seed is chosen so the probe
    keeps every coordinate clear of the floor.
    """
    spec = spec if spec is not None else GradCheckSpec()
    rng = np.random.default_rng(seed)
    model = build_model(spec.d_in, spec.hidden, spec.embed_dim, spec.r, spec.rho,
                        spec.n_classes, spec.head, rng,
                        detach_weights=spec.detach_weights)
    # Nudge every parameter off its symmetric initial value: at exact init
    # several coordinates (zero biases, batch-norm shifts) have structurally
    # zero gradients, where the relative-error denominator floor would
    # amplify plain finite-difference noise.
    for name, arr in trainable_params(model).items():
        arr += 0.1 * rng.standard_normal(arr.shape)
        if name.endswith(".b"):
            # Lift biases so units are rarely silent on the whole probe
            # batch; a unit that never fires has an exactly-zero gradient,
            # and the finite difference then measures bare rounding noise.
            arr += 0.2
    if model.fusion is not None:
        # Shrink the batch-norm scales so pair distances land where the
        # fusion gate is neither closed nor saturated; with unit scales the
        # distances of unrelated branches sit deep in the tanh tail, the
        # gate path all but vanishes and its true gradients drop below the
        # finite-difference noise floor.
        for bn in (model.fusion.bn_x, model.fusion.bn_y):
            bn.gamma[:] = 0.3 + 0.05 * rng.standard_normal(bn.gamma.shape)

    # Warm-up batch: initialises covariances so the check runs on the
    # accumulative blend rather than the special first-batch path.
    x1w = rng.normal(size=(spec.n, spec.d_in))
    x2w = rng.normal(size=(spec.n, spec.d_in))
    lw = rng.integers(0, spec.n_classes, size=spec.n)
    forward_backward(model, x1w, x2w, lw, lw, spec.loss_weights, 0.0, train=True)

    x1 = rng.normal(size=(spec.n, spec.d_in))
    x2 = rng.normal(size=(spec.n, spec.d_in))
    l1 = rng.integers(0, spec.n_classes, size=spec.n)
    l2 = l1.copy()
    l2[1::2] = (l1[1::2] + 1) % spec.n_classes  # mix of unchanged and changed pairs

    base = snapshot_state(model)

    def loss_now() -> float:
        bd, _, _ = forward_backward(model, x1, x2, l1, l2,
                                    spec.loss_weights, 0.0, train=True)
        return bd.total

    restore_state(model, base)
    _, grads, extras = forward_backward(model, x1, x2, l1, l2,
                                        spec.loss_weights, 0.0, train=True)

    targets = [(name, arr, grads[name]) for name, arr
               in trainable_params(model).items()]
    targets.append(("input.x1", x1, extras["d_x1"]))
    targets.append(("input.x2", x2, extras["d_x2"]))

    max_rel = 0.0
    worst = ""
    n_coords = 0
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            restore_state(model, base)
            flat[i] = orig + fd_step
            loss_plus = loss_now()
            restore_state(model, base)
            flat[i] = orig - fd_step
            loss_minus = loss_now()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * fd_step)
            rel = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-8)
            n_coords += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{i}]"
    restore_state(model, base)
    return GradCheckReport(max_rel_err=max_rel, worst_coordinate=worst,
                           n_coordinates=n_coords, fd_step=fd_step, tol=tol)
