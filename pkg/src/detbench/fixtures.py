"""Synthetic benchmark fixture: a tiny dataset whose crafted predictions hit
known per-class AP@0.5 values, plus per-model latency files."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np

from .dataset_io import DEFAULT_CLASSES, write_label_file
from .geometry import BoundingBox

IMAGE_SIZE = 416
GRID = 8               # 8x8 slots of 52 px per image
SLOT = IMAGE_SIZE // GRID
BOX = 40

# per-class AP@0.5 from the vehicle benchmark, in DEFAULT_CLASSES order
TARGET_AP50 = (0.837, 0.679, 0.355, 0.863, 0.982)

# (ground-truth count, leading TPs, FPs, trailing TPs) chosen by exhaustive
# search so the 101-point AP lands within 3e-5 of TARGET_AP50
RANKING_DESIGNS: Tuple[Tuple[int, int, int, int], ...] = (
    (36, 2, 6, 33),
    (23, 14, 3, 2),
    (29, 8, 3, 3),
    (26, 17, 2, 6),
    (10, 8, 1, 2),
)

MODEL_FPS = (("YOLOv8", 260.0), ("YOLOv10", 280.0), ("YOLOv11", 290.0))

_COLORS = ((220, 60, 60), (60, 160, 60), (60, 90, 220), (230, 170, 30), (150, 60, 200))


def _slot_box(slot: int, class_id: int, confidence=None) -> BoundingBox:
    row, col = divmod(slot, GRID)
    x0 = col * SLOT + (SLOT - BOX) / 2
    y0 = row * SLOT + (SLOT - BOX) / 2
    return BoundingBox(x0, y0, x0 + BOX, y0 + BOX, class_id, confidence)


def crafted_class(class_id: int, design: Tuple[int, int, int, int]):
    """Ground truth and ranked predictions for one single-class image."""
    n_gt, k1, n_fp, k2 = design
    if n_gt + n_fp > GRID * GRID:
        raise ValueError("design does not fit on one image")
    gts = [_slot_box(i, class_id) for i in range(n_gt)]
    ranking = [("tp", i) for i in range(k1)] + [("fp", n_gt + i) for i in range(n_fp)] \
        + [("tp", k1 + i) for i in range(k2)]
    preds = []
    for rank, (_, slot) in enumerate(ranking):
        conf = round(0.95 - 0.9 * rank / max(len(ranking) - 1, 1), 6)
        preds.append(_slot_box(slot, class_id, conf))
    return gts, preds


def _render(boxes: Sequence[BoundingBox]) -> np.ndarray:
    img = np.full((IMAGE_SIZE, IMAGE_SIZE, 3), 114, dtype=np.uint8)
    for b in boxes:
        img[int(b.y_min):int(b.y_max), int(b.x_min):int(b.x_max)] = _COLORS[b.class_id % len(_COLORS)]
    return img


def write_synthetic_fixture(root, perfect: bool = False) -> Path:
    """Write manifest, images, labels, three models' predictions, latencies and
    a run config under ``root``; returns the config path."""
    from PIL import Image

    root = Path(root)
    for sub in ("images", "labels", "latencies"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    preds_by_image: Dict[str, list] = {}
    for c, design in enumerate(RANKING_DESIGNS):
        image_id = f"img_{c:03d}"
        gts, preds = crafted_class(c, design)
        if perfect:
            preds = [g.with_confidence(1.0) for g in gts]
        Image.fromarray(_render(gts)).save(root / "images" / f"{image_id}.png")
        write_label_file(root / "labels" / f"{image_id}.txt", gts, IMAGE_SIZE, IMAGE_SIZE)
        preds_by_image[image_id] = preds

    models = {}
    for name, fps in MODEL_FPS:
        pdir = root / "predictions" / name
        pdir.mkdir(parents=True, exist_ok=True)
        for image_id, preds in preds_by_image.items():
            write_label_file(pdir / f"{image_id}.txt", preds, IMAGE_SIZE, IMAGE_SIZE)
        lat = root / "latencies" / f"{name}.txt"
        lat.write_text("".join(f"{1000.0 / fps!r}\n" for _ in range(100)), encoding="utf-8")
        models[name] = {"predictions": f"predictions/{name}", "latencies": f"latencies/{name}.txt"}

    (root / "manifest.json").write_text(json.dumps({
        "images_dir": "images",
        "labels_dir": "labels",
        "classes": list(DEFAULT_CLASSES),
        "image_size": [IMAGE_SIZE, IMAGE_SIZE],
    }, indent=2) + "\n", encoding="utf-8")
    config = {
        "dataset": "manifest.json",
        "models": models,
        "iou_thresholds": [round(0.5 + 0.05 * i, 2) for i in range(10)],
        "curve_points": 1000,
        "seed": 0,
        "out": "out",
    }
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
