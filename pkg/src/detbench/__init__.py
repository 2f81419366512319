"""detbench: object-detection benchmarking toolkit."""

__version__ = "0.1.0"

from .geometry import BoundingBox, NormalizedBox, iou, to_absolute, to_normalized  # noqa: E402
from .metrics import (  # noqa: E402
    COCO_IOU_THRESHOLDS,
    EvaluationReport,
    average_precision,
    confusion_matrix,
    evaluate,
    f1,
    match_predictions,
    mean_ap,
    precision,
    recall,
    sweep_curves,
    timing_stats,
)
from .estimators import DetectionEvaluator, ToyYOLO11Detector, YOLOAugmenter  # noqa: E402

__all__ = [
    "BoundingBox", "NormalizedBox", "iou", "to_absolute", "to_normalized",
    "COCO_IOU_THRESHOLDS", "EvaluationReport", "average_precision", "confusion_matrix", "evaluate",
    "f1", "match_predictions", "mean_ap", "precision", "recall", "sweep_curves", "timing_stats",
    "DetectionEvaluator", "ToyYOLO11Detector", "YOLOAugmenter",
]
