"""scikit-learn style wrappers so the toolkit composes with pipelines and
``get_params``/``set_params`` tooling."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_detections,
    check_images,
    check_open_unit,
    check_probability,
    check_samples,
)
from .augmentation import AugmentationConfig, ImageSample, apply_pipeline
from .blocks import ToyYOLO11
from .dataset_io import DEFAULT_CLASSES
from .geometry import BoundingBox
from .metrics import COCO_IOU_THRESHOLDS, evaluate


class DetectionEvaluator(BaseEstimator):
    """Computes the full metric suite for a set of predictions.

    ``fit(y_true, y_pred)`` takes ``image_id -> boxes`` mappings (or parallel
    lists of per-image box lists) and stores the report plus the headline
    numbers as fitted attributes.  ``score`` returns mAP@[0.5:0.95].
    """

    def __init__(self, class_names: Sequence[str] = DEFAULT_CLASSES,
                 iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS, n_curve_points: int = 1000,
                 conf_threshold: float = 0.25, confusion_iou: float = 0.45):
        self.class_names = class_names
        self.iou_thresholds = iou_thresholds
        self.n_curve_points = n_curve_points
        self.conf_threshold = conf_threshold
        self.confusion_iou = confusion_iou

    def fit(self, y_true, y_pred, latencies_ms: Optional[Sequence[float]] = None):
        gts = check_detections(y_true, name="y_true")
        preds = check_detections(y_pred, require_confidence=True, name="y_pred")
        unknown = set(preds) - set(gts)
        if unknown:
            raise ValueError(f"predictions for unknown images: {sorted(unknown)[:5]}")
        check_open_unit(self.conf_threshold, "conf_threshold")
        check_open_unit(self.confusion_iou, "confusion_iou")
        self.report_ = evaluate(gts, preds, tuple(self.class_names), tuple(self.iou_thresholds),
                                self.n_curve_points, self.conf_threshold, self.confusion_iou, latencies_ms)
        self.per_class_ap50_ = np.array([np.nan if c.ap50 is None else c.ap50 for c in self.report_.per_class])
        self.per_class_ap_ = np.array([np.nan if c.ap50_95 is None else c.ap50_95 for c in self.report_.per_class])
        self.map50_ = self.report_.map50
        self.map75_ = self.report_.map75
        self.map50_95_ = self.report_.map50_95
        self.confusion_matrix_ = self.report_.confusion.normalized
        self.best_f1_ = self.report_.curves.best_f1
        self.best_threshold_ = self.report_.curves.best_threshold
        return self

    def score(self, y_true, y_pred) -> float:
        return self.fit(y_true, y_pred).map50_95_


class YOLOAugmenter(TransformerMixin, BaseEstimator):
    """Training-time augmentation pipeline as a transformer over ImageSamples.

    ``fit`` stores the mosaic companion pool; ``transform`` is deterministic
    per ``(random_state, image_id)``.
    """

    def __init__(self, hsv_h=0.015, hsv_s=0.7, hsv_v=0.4, degrees=180.0, translate=0.1, scale=0.5,
                 shear=180.0, perspective=0.001, flipud=0.0, fliplr=0.5, mosaic=1.0,
                 min_box_area_fraction=1e-4, random_state=0):
        self.hsv_h = hsv_h
        self.hsv_s = hsv_s
        self.hsv_v = hsv_v
        self.degrees = degrees
        self.translate = translate
        self.scale = scale
        self.shear = shear
        self.perspective = perspective
        self.flipud = flipud
        self.fliplr = fliplr
        self.mosaic = mosaic
        self.min_box_area_fraction = min_box_area_fraction
        self.random_state = random_state

    def config(self) -> AugmentationConfig:
        params = self.get_params()
        seed = params.pop("random_state")
        return AugmentationConfig(**params, seed=0 if seed is None else int(seed))

    def fit(self, X, y=None):
        for name in ("flipud", "fliplr", "mosaic"):
            check_probability(getattr(self, name), name)
        self.config_ = self.config()
        self.pool_ = check_samples(X)
        return self

    def transform(self, X) -> List[ImageSample]:
        check_is_fitted(self, "config_")
        return [apply_pipeline(s, self.config_, self.pool_) for s in check_samples(X)]


class ToyYOLO11Detector(BaseEstimator):
    """Seeded, untrained toy YOLO11 exposing ``predict`` over image batches.

    There is no training: ``fit`` only materialises the seeded weights (or
    loads them from ``weights_path``).
    """

    def __init__(self, widths=(16, 32, 64, 96, 128), n_classes: int = 5, n_bottlenecks: int = 2,
                 conf_threshold: float = 0.25, nms_iou: float = 0.45, weights_path=None, random_state: int = 0):
        self.widths = widths
        self.n_classes = n_classes
        self.n_bottlenecks = n_bottlenecks
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.weights_path = weights_path
        self.random_state = random_state

    def fit(self, X=None, y=None):
        from .blocks import load_weights

        self.model_ = ToyYOLO11(tuple(self.widths), self.n_classes, int(self.random_state or 0), self.n_bottlenecks)
        if self.weights_path is not None:
            self.model_.load_state_dict(load_weights(self.weights_path))
        return self

    def predict(self, X) -> List[List[BoundingBox]]:
        check_is_fitted(self, "model_")
        check_open_unit(self.conf_threshold, "conf_threshold")
        check_open_unit(self.nms_iou, "nms_iou")
        return self.model_(check_images(X), self.conf_threshold, self.nms_iou)
