"""Correlation-gated cross-temporal fusion for bi-temporal classification.

A two-branch classifier for paired feature vectors observed at two times,
with a fusion module that gates cross-temporal information by the measured
per-pair similarity. All gradients are hand-derived and verified against
finite differences; training, evaluation and dataset tooling are exposed
both as a library and through the ``corrfusion`` command line.
"""

from .dataset import (
    PairedDataset,
    SplitIndices,
    batch_iter,
    gen_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import (
    CacheError,
    DegenerateBatchError,
    ManifestError,
    ModeError,
    ShapeError,
    TrainingDiverged,
)
from .fusion import (
    CorrFusionState,
    FusionOutput,
    corrfusion_backward,
    corrfusion_forward,
    dcca_objective,
    fusion_weights,
    init_corrfusion,
    instance_correlation,
    sdl_loss,
    soft_dcca_loss,
    update_covariance,
)
from .metrics import (
    EvalReport,
    change_confusion,
    confusion_matrix,
    oa_metrics,
    param_count,
    transition_matrix,
)
from .model import TwoBranchModel, build_model, forward_backward, predict
from .objective import LossBreakdown, LossWeights, change_mask, corr_loss, total_loss
from .serialize import load_model, save_model
from .train import (
    GradCheckReport,
    GradCheckSpec,
    TrainConfig,
    TrainResult,
    evaluate,
    gradcheck,
    sgd_momentum_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CacheError", "CorrFusionState", "DegenerateBatchError", "EvalReport",
    "FusionOutput", "GradCheckReport", "GradCheckSpec", "LossBreakdown",
    "LossWeights", "ManifestError", "ModeError", "PairedDataset", "ShapeError",
    "SplitIndices", "TrainConfig", "TrainResult", "TrainingDiverged",
    "TwoBranchModel", "batch_iter", "build_model", "change_confusion",
    "change_mask", "confusion_matrix", "corr_loss", "corrfusion_backward",
    "corrfusion_forward", "dcca_objective", "evaluate", "forward_backward",
    "fusion_weights", "gen_synthetic", "gradcheck", "init_corrfusion",
    "instance_correlation", "load_dataset", "load_model", "oa_metrics",
    "param_count", "predict", "save_dataset", "save_model", "sdl_loss",
    "sgd_momentum_step", "soft_dcca_loss", "split_dataset", "total_loss",
    "train", "transition_matrix", "update_covariance",
]
