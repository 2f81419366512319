"""Box representations, coordinate conversions and IoU.

Corner form (x_min, y_min, x_max, y_max) in continuous pixel coordinates is
the canonical representation; the normalized center/size form only exists at
the label-file boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with a class id and an optional confidence."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0
    confidence: Optional[float] = None

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"inverted box corners: {self}")
        if self.class_id < 0:
            raise ValueError(f"negative class id: {self.class_id}")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=float)

    def with_confidence(self, confidence: Optional[float]) -> "BoundingBox":
        return replace(self, confidence=confidence)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return replace(self, x_min=self.x_min + dx, y_min=self.y_min + dy,
                       x_max=self.x_max + dx, y_max=self.y_max + dy)


@dataclass(frozen=True)
class NormalizedBox:
    """YOLO label-file box: center and size as fractions of the image size."""

    x_center: float
    y_center: float
    width: float
    height: float
    class_id: int = 0
    confidence: Optional[float] = None

    def __post_init__(self):
        for name in ("x_center", "y_center", "width", "height"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(union > 0) & (inter > 0))
    return out


def boxes_to_array(boxes) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=float)
    return np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes], dtype=float)


def _check_image_size(img_w, img_h):
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {img_w}x{img_h}")


def clamp_box(box: BoundingBox, img_w: float, img_h: float) -> BoundingBox:
    x0 = min(max(box.x_min, 0.0), img_w)
    y0 = min(max(box.y_min, 0.0), img_h)
    x1 = min(max(box.x_max, 0.0), img_w)
    y1 = min(max(box.y_max, 0.0), img_h)
    return replace(box, x_min=x0, y_min=y0, x_max=x1, y_max=y1)


def to_absolute(n: NormalizedBox, img_w: float, img_h: float) -> BoundingBox:
    """Convert a normalized center/size box to clamped pixel corners."""
    _check_image_size(img_w, img_h)
    half_w = n.width * img_w / 2.0
    half_h = n.height * img_h / 2.0
    cx = n.x_center * img_w
    cy = n.y_center * img_h
    x0 = min(max(cx - half_w, 0.0), img_w)
    y0 = min(max(cy - half_h, 0.0), img_h)
    x1 = min(max(cx + half_w, 0.0), img_w)
    y1 = min(max(cy + half_h, 0.0), img_h)
    return BoundingBox(x0, y0, x1, y1, class_id=n.class_id, confidence=n.confidence)


def to_normalized(b: BoundingBox, img_w: float, img_h: float) -> NormalizedBox:
    """Inverse of :func:`to_absolute` for boxes lying inside the image."""
    _check_image_size(img_w, img_h)
    if b.x_min < 0 or b.y_min < 0 or b.x_max > img_w or b.y_max > img_h:
        raise ValueError(f"box {b} lies outside the {img_w}x{img_h} image")
    return NormalizedBox(
        x_center=(b.x_min + b.x_max) / 2.0 / img_w,
        y_center=(b.y_min + b.y_max) / 2.0 / img_h,
        width=(b.x_max - b.x_min) / img_w,
        height=(b.y_max - b.y_min) / img_h,
        class_id=b.class_id,
        confidence=b.confidence,
    )
