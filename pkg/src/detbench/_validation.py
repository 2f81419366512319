"""Input validation helpers shared by the estimator wrappers."""
from __future__ import annotations

from collections.abc import Mapping
from typing import Dict, List

import numpy as np

from .augmentation import ImageSample
from .geometry import BoundingBox


def check_probability(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_open_unit(value, name: str) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_boxes(boxes, require_confidence: bool = False, name: str = "boxes") -> List[BoundingBox]:
    out = list(boxes)
    for b in out:
        if not isinstance(b, BoundingBox):
            raise TypeError(f"{name} must contain BoundingBox values, got {type(b).__name__}")
        if require_confidence and b.confidence is None:
            raise ValueError(f"{name}: every prediction needs a confidence")
    return out


def check_detections(y, require_confidence: bool = False, name: str = "y") -> Dict[str, List[BoundingBox]]:
    """Accept ``image_id -> boxes`` mappings or a list of per-image box lists."""
    if isinstance(y, Mapping):
        items = y.items()
    else:
        items = ((str(i), boxes) for i, boxes in enumerate(y))
    return {str(k): check_boxes(v, require_confidence, f"{name}[{k!r}]") for k, v in items}


def check_samples(X) -> List[ImageSample]:
    if isinstance(X, ImageSample):
        return [X]
    samples = list(X)
    for s in samples:
        if not isinstance(s, ImageSample):
            raise TypeError(f"expected ImageSample values, got {type(s).__name__}")
    return samples


def check_images(X) -> np.ndarray:
    """Images as an (N, 3, H, W) float array; (N, H, W, 3) uint8 batches are transposed."""
    x = np.asarray(X)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected a 4-d image batch, got shape {x.shape}")
    if x.shape[1] != 3 and x.shape[3] == 3:
        x = x.transpose(0, 3, 1, 2)
    if x.shape[1] != 3:
        raise ValueError(f"expected 3 colour channels, got shape {x.shape}")
    x = x.astype(float)
    if np.issubdtype(np.asarray(X).dtype, np.integer):
        x = x / 255.0
    return x
