"""Training stack: losses, anchor sampling, reference model, loop, augmentation."""

from .augment import (
    AugmentedSample,
    Transform,
    apply_boxes,
    apply_labeled,
    augment,
    flip_box_h,
    flip_box_v,
    sample_transform,
)
from .loss import (
    EPSILON,
    LAMBDA_REG,
    AnchorKind,
    LossBreakdown,
    LossError,
    batch_loss,
    bce,
    classification_loss,
    localization_loss,
    smooth_l1,
    smooth_l1_grad,
)
from .model import LinearLogisticModel, ScoringModel, TrainingInstance, sigmoid
from .sampling import (
    AnchorAssignment,
    LabeledBox,
    MatchConfig,
    MatchStats,
    generate_anchors,
    match_and_sample,
    match_anchors,
    sample_batch,
)
from .training import (
    DIVERGENCE_LIMIT,
    EpochRow,
    TrainingDiverged,
    make_toy_instance,
    new_reference_model,
    train_epochs,
    write_trace,
)

__all__ = [
    "AnchorAssignment", "AnchorKind", "AugmentedSample", "DIVERGENCE_LIMIT",
    "EPSILON", "EpochRow", "LAMBDA_REG", "LabeledBox", "LinearLogisticModel",
    "LossBreakdown", "LossError", "MatchConfig", "MatchStats", "ScoringModel",
    "TrainingDiverged", "TrainingInstance", "Transform", "apply_boxes",
    "apply_labeled", "augment", "batch_loss", "bce", "classification_loss",
    "flip_box_h", "flip_box_v", "generate_anchors", "localization_loss",
    "make_toy_instance", "match_and_sample", "match_anchors",
    "new_reference_model", "sample_batch", "sigmoid", "smooth_l1",
    "smooth_l1_grad", "train_epochs", "write_trace",
]
