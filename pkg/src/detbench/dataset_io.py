"""YOLO label/prediction parsing, dataset manifests and train/val/test splits."""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    BadRatios,
    ConfigError,
    DecodeError,
    MalformedLine,
    MissingFile,
    OutOfRange,
    UnknownClass,
)
from .geometry import BoundingBox, NormalizedBox, to_absolute, to_normalized

logger = logging.getLogger(__name__)

DEFAULT_CLASSES = ("car", "motorcycle", "truck", "bus", "bicycle")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def worker_count() -> int:
    """Worker cap from ``DETBENCH_THREADS`` (defaults to 1)."""
    raw = os.environ.get("DETBENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"DETBENCH_THREADS must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class ClassMap:
    names: Tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ConfigError("class map is empty")
        if any(not isinstance(n, str) or not n for n in names):
            raise ConfigError("class names must be non-empty strings")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names in {names}")

    def __len__(self):
        return len(self.names)

    def __getitem__(self, class_id: int) -> str:
        return self.names[class_id]

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    ground_truth: Tuple[BoundingBox, ...] = ()
    image_path: Optional[Path] = None


@dataclass
class Dataset:
    records: List[ImageRecord]
    classes: ClassMap
    image_size: Optional[Tuple[int, int]] = None
    root: Optional[Path] = None

    def __iter__(self):
        # unpacks as ``records, classes``
        return iter((self.records, self.classes))

    @property
    def ids(self) -> List[str]:
        return [r.image_id for r in self.records]

    def by_id(self) -> Dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}


# image_id -> predicted boxes (confidence present)
PredictionSet = Dict[str, List[BoundingBox]]


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[str, ...]
    validation: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int
    ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def _parse_unit(token: str, name: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise MalformedLine(f"non-numeric {name} field {token!r}") from None
    if not math.isfinite(v):
        raise MalformedLine(f"non-finite {name} field {token!r}")
    if not 0.0 <= v <= 1.0:
        raise OutOfRange(f"{name}={v} outside [0, 1]")
    return v


def parse_label_line(line: str, img_w: float, img_h: float, has_confidence: bool = False,
                     n_classes: Optional[int] = None) -> BoundingBox:
    """Parse ``class x_center y_center width height [confidence]``.

    ``n_classes`` enables the strict unknown-class check.
    """
    fields = line.split()
    expected = 6 if has_confidence else 5
    if len(fields) != expected:
        raise MalformedLine(f"expected {expected} fields, got {len(fields)}: {line.strip()!r}")
    try:
        class_id = int(fields[0])
    except ValueError:
        raise MalformedLine(f"class id {fields[0]!r} is not an integer") from None
    if class_id < 0:
        raise MalformedLine(f"negative class id {class_id}")
    if n_classes is not None and class_id >= n_classes:
        raise UnknownClass(f"class id {class_id} not in a {n_classes}-class map")
    xc, yc, w, h = (_parse_unit(t, n) for t, n in zip(fields[1:5], ("x_center", "y_center", "width", "height")))
    conf = _parse_unit(fields[5], "confidence") if has_confidence else None
    return to_absolute(NormalizedBox(xc, yc, w, h, class_id, conf), img_w, img_h)


def format_label_line(box: BoundingBox, img_w: float, img_h: float) -> str:
    n = to_normalized(box, img_w, img_h)
    parts = [str(n.class_id)] + [f"{v:.9g}" for v in (n.x_center, n.y_center, n.width, n.height)]
    if n.confidence is not None:
        parts.append(f"{n.confidence:.9g}")
    return " ".join(parts)


def read_label_file(path, img_w: float, img_h: float, has_confidence: bool = False,
                    n_classes: Optional[int] = None, strict: bool = True) -> List[BoundingBox]:
    """Read one label file; errors carry ``file:line`` context.

    In lenient mode bad lines are logged and skipped.
    """
    path = Path(path)
    boxes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                boxes.append(parse_label_line(line, img_w, img_h, has_confidence, n_classes))
            except (MalformedLine, OutOfRange, UnknownClass) as exc:
                if strict:
                    raise type(exc)(f"{path}:{lineno}: {exc}") from None
                logger.warning("skipping %s:%d: %s", path, lineno, exc)
    return boxes


def write_label_file(path, boxes: Sequence[BoundingBox], img_w: float, img_h: float) -> None:
    lines = [format_label_line(b, img_w, img_h) for b in boxes]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _image_size(path: Path) -> Tuple[int, int]:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot read image size from {path}: {exc}") from None


def _read_manifest(manifest_path: Path) -> dict:
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{manifest_path}: invalid JSON: {exc}") from None
    for key in ("images_dir", "labels_dir", "classes"):
        if key not in manifest:
            raise ConfigError(f"{manifest_path}: missing key {key!r}")
    size = manifest.get("image_size")
    if size is not None and (len(size) != 2 or any(int(v) <= 0 for v in size)):
        raise ConfigError(f"{manifest_path}: image_size must be [w, h] with positive entries")
    return manifest


def load_dataset(manifest_path, strict: bool = True) -> Dataset:
    """Load every image listed in a manifest's image directory with its labels."""
    manifest_path = Path(manifest_path)
    manifest = _read_manifest(manifest_path)
    root = manifest_path.parent
    images_dir = root / manifest["images_dir"]
    labels_dir = root / manifest["labels_dir"]
    classes = ClassMap(tuple(manifest["classes"]))
    size = manifest.get("image_size")
    size = (int(size[0]), int(size[1])) if size is not None else None

    for d in (images_dir, labels_dir):
        if not d.is_dir():
            raise MissingFile(f"directory not found: {d}")
    images = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    image_ids = {p.stem for p in images}
    for label in sorted(labels_dir.glob("*.txt")):
        if label.stem not in image_ids:
            if strict:
                raise MissingFile(f"label file {label} has no matching image")
            logger.warning("label file %s has no matching image; ignored", label)

    def load_one(img: Path) -> ImageRecord:
        w, h = size if size is not None else _image_size(img)
        label = labels_dir / f"{img.stem}.txt"
        if label.is_file():
            gt = read_label_file(label, w, h, False, len(classes), strict)
        elif strict:
            raise MissingFile(f"image {img} has no label file {label}")
        else:
            logger.warning("image %s has no label file; treated as empty", img)
            gt = []
        return ImageRecord(img.stem, w, h, tuple(gt), img)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(load_one, images))
    return Dataset(records, classes, size, root)


def load_predictions(pred_dir, dataset: Dataset, strict: bool = True) -> PredictionSet:
    """Read a directory of 6-field prediction files named after the label files.

    Images without a prediction file get an empty prediction list.
    """
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise MissingFile(f"prediction directory not found: {pred_dir}")
    records = dataset.by_id()
    n_classes = len(dataset.classes)
    for path in sorted(pred_dir.glob("*.txt")):
        if path.stem not in records:
            if strict:
                raise MissingFile(f"prediction file {path} references unknown image {path.stem!r}")
            logger.warning("prediction file %s references unknown image; ignored", path)

    def load_one(rec: ImageRecord):
        path = pred_dir / f"{rec.image_id}.txt"
        if not path.is_file():
            return rec.image_id, []
        return rec.image_id, read_label_file(path, rec.width, rec.height, True, n_classes, strict)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return dict(pool.map(load_one, dataset.records))


def split_dataset(ids: Sequence[str], ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15),
                  seed: int = 0) -> DatasetSplit:
    """Shuffle ``ids`` with a seeded generator and cut it into train/val/test.

    Train and validation sizes are floored; test takes the remainder.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = list(ids)
    if not ids:
        raise BadRatios("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    n = len(ids)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    # guard against 0.29 * 100 == 28.999999999999996
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
        seed=seed,
        ratios=ratios,
    )
