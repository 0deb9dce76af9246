"""Anchor-based detection target machinery, losses, metrics, and a baseline
classification recipe, verifiable at desk scale on seeded synthetic data."""

from .geometry import (
    AnchorConfig,
    AnchorGrid,
    Box,
    DEFAULT_ANCHOR_CONFIG,
    coverage_report,
    generate_anchors,
    iou,
    iou_matrix,
)
from .losses import (
    ClassWeights,
    LossResult,
    ScoredBatch,
    bce,
    focal_loss,
    gradient,
    mse,
    smooth_l1,
    weighted_bce,
)
from .matching import (
    AssignmentPolicy,
    OffsetVector,
    TargetAssignment,
    assign_targets,
    decode_offsets,
    encode_offsets,
)
from .metrics import (
    BinaryMask,
    ConfusionCounts,
    DegenerateLabelsError,
    EvalReport,
    accuracy,
    confusion,
    detection_top1_eval,
    pixel_iou,
    roc_auc,
    segmentation_report,
)
from .trainer import (
    FoldSplit,
    LinearModel,
    TrainConfig,
    kfold_split,
    lr_at,
    predict,
    sgd_train,
)
from .data import (
    DatasetSummary,
    ImageRecord,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    resize,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "AnchorGrid",
    "AssignmentPolicy",
    "BinaryMask",
    "Box",
    "ClassWeights",
    "ConfusionCounts",
    "DEFAULT_ANCHOR_CONFIG",
    "DatasetSummary",
    "DegenerateLabelsError",
    "EvalReport",
    "FoldSplit",
    "ImageRecord",
    "LinearModel",
    "LossResult",
    "OffsetVector",
    "ScoredBatch",
    "SynthConfig",
    "TargetAssignment",
    "TrainConfig",
    "accuracy",
    "assign_targets",
    "bce",
    "confusion",
    "coverage_report",
    "decode_offsets",
    "detection_top1_eval",
    "encode_offsets",
    "focal_loss",
    "generate_anchors",
    "generate_synthetic",
    "gradient",
    "iou",
    "iou_matrix",
    "kfold_split",
    "load_dataset",
    "lr_at",
    "mse",
    "pixel_iou",
    "predict",
    "resize",
    "roc_auc",
    "segmentation_report",
    "sgd_train",
    "smooth_l1",
    "summarize",
    "weighted_bce",
]
