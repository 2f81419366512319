"""Detection matching and evaluation metrics.

Matching follows the COCO greedy protocol: predictions are visited in
descending confidence order and each claims the unmatched same-class ground
truth it overlaps most, provided the IoU clears the threshold.  AP uses
101-point interpolation of the precision envelope.
"""
from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EmptyListError, MissingConfidence, NoSupportWarning
from .geometry import BoundingBox, boxes_to_array, iou_matrix

COCO_IOU_THRESHOLDS: Tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# scalar metrics


def precision(tp: int, fp: int) -> float:
    """TP / (TP + FP); 1.0 when nothing was predicted (PR-curve anchor)."""
    if tp < 0 or fp < 0:
        raise ValueError("counts must be non-negative")
    if tp + fp == 0:
        return 1.0
    return tp / (tp + fp)


def recall(tp: int, fn: int) -> float:
    """TP / (TP + FN); 0.0 with a :class:`NoSupportWarning` for an empty class."""
    if tp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    if tp + fn == 0:
        warnings.warn("recall requested for a class with no ground truth", NoSupportWarning, stacklevel=2)
        return 0.0
    return tp / (tp + fn)


def f1(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def mean_ap(per_class_aps: Sequence[Optional[float]]) -> float:
    """Arithmetic mean over classes, skipping absent (None/NaN) entries."""
    values = [float(v) for v in per_class_aps if v is not None and not math.isnan(v)]
    if not values:
        raise EmptyListError("no APs to average")
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# matching


@dataclass
class MatchResult:
    """Per-prediction match flags for one or more images.

    Predictions are stored in evaluation order (descending confidence, ties
    by image then input order).
    """

    iou_thresholds: Tuple[float, ...]
    class_ids: np.ndarray          # (P,)
    confidences: np.ndarray        # (P,)
    tp: np.ndarray                 # (P, T) bool
    matched_gt: np.ndarray         # (P, T) ground-truth index within its image, -1 if FP
    image_index: np.ndarray        # (P,)
    pred_index: np.ndarray         # (P,) index within the image's input list
    gt_counts: Dict[int, int]
    image_gt_counts: List[Dict[int, int]] = field(default_factory=list)

    @property
    def n_predictions(self) -> int:
        return int(self.confidences.shape[0])

    def threshold_index(self, iou_threshold: float) -> int:
        for k, t in enumerate(self.iou_thresholds):
            if abs(t - iou_threshold) < 1e-9:
                return k
        raise ValueError(f"IoU threshold {iou_threshold} was not matched (have {self.iou_thresholds})")

    def classes(self) -> List[int]:
        return sorted(set(self.gt_counts) | set(int(c) for c in self.class_ids))

    def counts(self, class_id: int, iou_threshold: float) -> Tuple[int, int, int]:
        """(TP, FP, FN) for one class at one threshold, all confidences kept."""
        k = self.threshold_index(iou_threshold)
        sel = self.class_ids == class_id
        tp = int(self.tp[sel, k].sum())
        fp = int(sel.sum()) - tp
        return tp, fp, self.gt_counts.get(class_id, 0) - tp

    @classmethod
    def concat(cls, results: Sequence["MatchResult"]) -> "MatchResult":
        if not results:
            raise EmptyListError("nothing to concatenate")
        thr = results[0].iou_thresholds
        if any(r.iou_thresholds != thr for r in results):
            raise ValueError("cannot merge match results built on different IoU grids")
        image_index = np.concatenate([np.full(r.n_predictions, i, dtype=int) for i, r in enumerate(results)])
        conf = np.concatenate([r.confidences for r in results])
        order = np.argsort(-conf, kind="stable")
        gt_counts: Dict[int, int] = {}
        for r in results:
            for c, n in r.gt_counts.items():
                gt_counts[c] = gt_counts.get(c, 0) + n
        return cls(
            iou_thresholds=thr,
            class_ids=np.concatenate([r.class_ids for r in results])[order],
            confidences=conf[order],
            tp=np.concatenate([r.tp for r in results])[order],
            matched_gt=np.concatenate([r.matched_gt for r in results])[order],
            image_index=image_index[order],
            pred_index=np.concatenate([r.pred_index for r in results])[order],
            gt_counts=dict(sorted(gt_counts.items())),
            image_gt_counts=[c for r in results for c in r.image_gt_counts],
        )


def _check_thresholds(iou_thresholds) -> Tuple[float, ...]:
    thr = tuple(float(t) for t in iou_thresholds)
    if not thr:
        raise ValueError("at least one IoU threshold is required")
    if any(not 0.0 < t <= 1.0 for t in thr):
        raise ValueError(f"IoU thresholds must lie in (0, 1]: {thr}")
    if any(b <= a for a, b in zip(thr, thr[1:])):
        raise ValueError(f"IoU thresholds must be strictly increasing: {thr}")
    return thr


def match_predictions(gts: Sequence[BoundingBox], preds: Sequence[BoundingBox],
                      iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS) -> MatchResult:
    """Greedy, confidence-descending, one-to-one, class-gated matching for one image."""
    thr = _check_thresholds(iou_thresholds)
    if any(p.confidence is None for p in preds):
        raise MissingConfidence("every prediction needs a confidence")
    conf = np.array([p.confidence for p in preds], dtype=float)
    pcls = np.array([p.class_id for p in preds], dtype=int)
    gcls = np.array([g.class_id for g in gts], dtype=int)
    order = np.argsort(-conf, kind="stable")
    ious = iou_matrix(boxes_to_array(preds), boxes_to_array(gts))
    same_class = pcls[:, None] == gcls[None, :]

    n_pred, n_gt = len(preds), len(gts)
    tp = np.zeros((n_pred, len(thr)), dtype=bool)
    matched = np.full((n_pred, len(thr)), -1, dtype=int)
    for k, t in enumerate(thr):
        if n_gt == 0:
            break
        taken = np.zeros(n_gt, dtype=bool)
        for i in order:
            cand = np.where(same_class[i] & ~taken, ious[i], -1.0)
            j = int(np.argmax(cand))  # first maximum: lowest gt index on ties
            if cand[j] >= t:
                taken[j] = True
                tp[i, k] = True
                matched[i, k] = j

    counts: Dict[int, int] = {}
    for c in gcls:
        counts[int(c)] = counts.get(int(c), 0) + 1
    counts = dict(sorted(counts.items()))
    return MatchResult(
        iou_thresholds=thr,
        class_ids=pcls[order],
        confidences=conf[order],
        tp=tp[order],
        matched_gt=matched[order],
        image_index=np.zeros(n_pred, dtype=int),
        pred_index=order.astype(int),
        gt_counts=counts,
        image_gt_counts=[counts],
    )


def match_dataset(gts: Mapping, preds: Mapping, iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
                  image_ids: Optional[Sequence[str]] = None) -> MatchResult:
    """Match every image and merge; ``image_ids`` fixes the merge order."""
    ids = list(image_ids) if image_ids is not None else list(gts)
    return MatchResult.concat([match_predictions(gts.get(i, ()), preds.get(i, ()), iou_thresholds) for i in ids])


# ---------------------------------------------------------------------------
# average precision


def pr_points(match: MatchResult, class_id: int, iou_threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative (recall, precision) after each ranked prediction of a class."""
    k = match.threshold_index(iou_threshold)
    n_gt = match.gt_counts.get(class_id, 0)
    sel = match.class_ids == class_id
    tp = match.tp[sel, k]
    tpc = np.cumsum(tp)
    fpc = np.cumsum(~tp)
    rc = tpc / n_gt if n_gt else np.zeros(tpc.shape)
    pr = tpc / np.maximum(tpc + fpc, 1)
    return rc, pr


def interpolated_precision(rc: np.ndarray, pr: np.ndarray, recall_grid: np.ndarray = RECALL_GRID) -> np.ndarray:
    """Precision envelope max(p(r') : r' >= r) sampled on ``recall_grid``."""
    env = np.maximum.accumulate(np.asarray(pr, dtype=float)[::-1])[::-1]
    idx = np.searchsorted(rc, recall_grid, side="left")
    q = np.zeros(len(recall_grid))
    valid = idx < len(env)
    q[valid] = env[idx[valid]]
    return q


def average_precision(match: MatchResult, class_id: int, iou_threshold: float) -> Optional[float]:
    """101-point interpolated AP; ``None`` when the class has no ground truth."""
    if match.gt_counts.get(class_id, 0) == 0:
        return None
    rc, pr = pr_points(match, class_id, iou_threshold)
    return float(np.mean(interpolated_precision(rc, pr)))


# ---------------------------------------------------------------------------
# confidence sweeps


@dataclass(frozen=True)
class CurveSample:
    confidence_threshold: float
    precision: float
    recall: float
    f1: float
    class_id: Optional[int] = None  # None for the all-class aggregate


@dataclass
class ConfidenceCurves:
    """P/R/F1 as functions of the confidence cutoff, per class and all-class."""

    iou_threshold: float
    thresholds: np.ndarray
    precision: Dict[int, np.ndarray]
    recall: Dict[int, np.ndarray]
    f1: Dict[int, np.ndarray]
    all_precision: np.ndarray
    all_recall: np.ndarray
    all_f1: np.ndarray
    best_f1: float
    best_threshold: float

    def samples(self, class_id: Optional[int] = None) -> List[CurveSample]:
        if class_id is None:
            p, r, f = self.all_precision, self.all_recall, self.all_f1
        else:
            p, r, f = self.precision[class_id], self.recall[class_id], self.f1[class_id]
        return [CurveSample(float(t), float(a), float(b), float(c), class_id)
                for t, a, b, c in zip(self.thresholds, p, r, f)]


def sweep_curves(match: MatchResult, iou_threshold: float = 0.5, n_points: int = 1000,
                 class_ids: Optional[Sequence[int]] = None) -> ConfidenceCurves:
    """Sweep confidence cutoffs over uniform points plus every distinct confidence.

    The all-class curves average the per-class curves of classes with ground
    truth; the best-F1 operating point is taken from the all-class F1.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    k = match.threshold_index(iou_threshold)
    thresholds = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_points), match.confidences]))
    classes = list(class_ids) if class_ids is not None else match.classes()

    P, R, F = {}, {}, {}
    for c in classes:
        sel = match.class_ids == c
        conf = match.confidences[sel]        # already descending
        tpc = np.concatenate([[0], np.cumsum(match.tp[sel, k])])
        # number of predictions with confidence >= threshold
        n_kept = len(conf) - np.searchsorted(conf[::-1], thresholds, side="left")
        tp = tpc[n_kept]
        n_gt = match.gt_counts.get(c, 0)
        p = np.where(n_kept > 0, tp / np.maximum(n_kept, 1), 1.0)
        r = tp / n_gt if n_gt else np.zeros(len(thresholds))
        denom = p + r
        f = np.where(denom > 0, 2 * p * r / np.where(denom > 0, denom, 1.0), 0.0)
        P[c], R[c], F[c] = p, r, f

    supported = [c for c in classes if match.gt_counts.get(c, 0) > 0]
    if supported:
        all_p = np.mean([P[c] for c in supported], axis=0)
        all_r = np.mean([R[c] for c in supported], axis=0)
        all_f = np.mean([F[c] for c in supported], axis=0)
    else:
        all_p = np.ones(len(thresholds))
        all_r = np.zeros(len(thresholds))
        all_f = np.zeros(len(thresholds))
    best = int(np.argmax(all_f))
    return ConfidenceCurves(
        iou_threshold=float(match.iou_thresholds[k]),
        thresholds=thresholds,
        precision=P, recall=R, f1=F,
        all_precision=all_p, all_recall=all_r, all_f1=all_f,
        best_f1=float(all_f[best]), best_threshold=float(thresholds[best]),
    )


# ---------------------------------------------------------------------------
# confusion matrix


@dataclass
class ConfusionMatrix:
    """(C+1)x(C+1) counts; rows are true classes, columns predicted; last index is background."""

    counts: np.ndarray

    @classmethod
    def empty(cls, n_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes + 1, n_classes + 1), dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def background(self) -> int:
        return self.n_classes

    @property
    def normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(float)
        out = np.zeros(self.counts.shape, dtype=float)
        np.divide(self.counts, rows, out=out, where=rows > 0)
        return out

    def add_image(self, gts: Sequence[BoundingBox], preds: Sequence[BoundingBox],
                  conf_threshold: float = 0.25, iou_threshold: float = 0.45) -> None:
        kept = [p for p in preds if p.confidence is None or p.confidence >= conf_threshold]
        if any(p.confidence is None for p in kept):
            raise MissingConfidence("every prediction needs a confidence")
        for box in list(gts) + kept:
            if box.class_id >= self.n_classes:
                raise ValueError(f"class id {box.class_id} outside a {self.n_classes}-class matrix")
        conf = np.array([p.confidence for p in kept], dtype=float)
        order = np.argsort(-conf, kind="stable")
        ious = iou_matrix(boxes_to_array(kept), boxes_to_array(gts))
        taken = np.zeros(len(gts), dtype=bool)
        bg = self.background
        for i in order:
            pred_cls = kept[i].class_id
            if len(gts):
                cand = np.where(taken, -1.0, ious[i])
                j = int(np.argmax(cand))
                if cand[j] >= iou_threshold:
                    taken[j] = True
                    self.counts[gts[j].class_id, pred_cls] += 1
                    continue
            self.counts[bg, pred_cls] += 1
        for j, g in enumerate(gts):
            if not taken[j]:
                self.counts[g.class_id, bg] += 1


def confusion_matrix(gts, preds, n_classes: int, conf_threshold: float = 0.25,
                     iou_threshold: float = 0.45) -> ConfusionMatrix:
    """Class-agnostic greedy confusion matrix.

    ``gts``/``preds`` are either box lists for one image or mappings
    ``image_id -> boxes`` for a dataset.
    """
    for name, t in (("conf_threshold", conf_threshold), ("iou_threshold", iou_threshold)):
        if not 0.0 < t < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {t}")
    cm = ConfusionMatrix.empty(n_classes)
    if isinstance(gts, Mapping):
        for image_id in gts:
            cm.add_image(gts[image_id], preds.get(image_id, ()), conf_threshold, iou_threshold)
    else:
        cm.add_image(gts, preds, conf_threshold, iou_threshold)
    return cm


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingStats:
    latencies_ms: Tuple[float, ...]
    mean_ms: float
    median_ms: float
    p95_ms: float
    total_seconds: float
    fps: float

    @property
    def n_images(self) -> int:
        return len(self.latencies_ms)


def timing_stats(latencies_ms: Sequence[float]) -> TimingStats:
    lat = np.asarray(latencies_ms, dtype=float)
    if lat.size == 0:
        raise EmptyListError("no latencies given")
    if np.any(~np.isfinite(lat)) or np.any(lat <= 0):
        raise ValueError("latencies must be positive and finite")
    total_ms = float(lat.sum())
    return TimingStats(
        latencies_ms=tuple(float(v) for v in lat),
        mean_ms=float(lat.mean()),
        median_ms=float(np.median(lat)),
        p95_ms=float(np.percentile(lat, 95)),
        total_seconds=total_ms / 1000.0,
        fps=1000.0 * lat.size / total_ms,
    )


# ---------------------------------------------------------------------------
# full evaluation


@dataclass
class ClassResult:
    class_id: int
    name: str
    n_ground_truth: int
    n_predictions: int
    ap_per_threshold: Tuple[Optional[float], ...]
    ap50: Optional[float]
    ap75: Optional[float]
    ap50_95: Optional[float]

    @property
    def absent(self) -> bool:
        return self.n_ground_truth == 0


@dataclass
class EvaluationReport:
    class_names: Tuple[str, ...]
    iou_thresholds: Tuple[float, ...]
    per_class: List[ClassResult]
    map50: Optional[float]
    map75: Optional[float]
    map50_95: Optional[float]
    curves: ConfidenceCurves
    pr_curves: Dict[int, np.ndarray]     # interpolated precision on RECALL_GRID at IoU 0.5
    confusion: ConfusionMatrix
    timing: Optional[TimingStats] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        cm = self.confusion
        labels = list(self.class_names) + ["background"]
        curves = self.curves
        return {
            "schema_version": SCHEMA_VERSION,
            "metadata": dict(self.metadata, iou_thresholds=list(self.iou_thresholds)),
            "summary": {"map50": self.map50, "map75": self.map75, "map50_95": self.map50_95},
            "per_class": [
                {
                    "class_id": c.class_id,
                    "name": c.name,
                    "n_ground_truth": c.n_ground_truth,
                    "n_predictions": c.n_predictions,
                    "absent": c.absent,
                    "ap50": c.ap50,
                    "ap75": c.ap75,
                    "ap50_95": c.ap50_95,
                    "ap_per_threshold": list(c.ap_per_threshold),
                }
                for c in self.per_class
            ],
            "curves": {
                "iou_threshold": curves.iou_threshold,
                "best_f1": curves.best_f1,
                "best_threshold": curves.best_threshold,
                "n_thresholds": int(len(curves.thresholds)),
            },
            "confusion_matrix": {
                "labels": labels,
                "counts": cm.counts.tolist(),
                "normalized": cm.normalized.tolist(),
            },
            "timing": None if self.timing is None else {
                "n_images": self.timing.n_images,
                "mean_ms": self.timing.mean_ms,
                "median_ms": self.timing.median_ms,
                "p95_ms": self.timing.p95_ms,
                "total_seconds": self.timing.total_seconds,
                "fps": self.timing.fps,
            },
        }


def _ap_at(aps: Sequence[Optional[float]], thresholds: Sequence[float], target: float) -> Optional[float]:
    for a, t in zip(aps, thresholds):
        if abs(t - target) < 1e-9:
            return a
    return None


def _mean_or_none(values):
    try:
        return mean_ap(values)
    except EmptyListError:
        return None


def evaluate(gts: Mapping, preds: Mapping, class_names: Sequence[str],
             iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS, n_curve_points: int = 1000,
             conf_threshold: float = 0.25, confusion_iou: float = 0.45,
             latencies_ms: Optional[Sequence[float]] = None,
             image_ids: Optional[Sequence[str]] = None, metadata: Optional[dict] = None) -> EvaluationReport:
    """Run the whole metric suite over a dataset of ``image_id -> boxes`` mappings."""
    thr = _check_thresholds(iou_thresholds)
    names = tuple(class_names)
    ids = list(image_ids) if image_ids is not None else list(gts)
    match = match_dataset(gts, preds, thr, ids)
    curve_iou = 0.5 if any(abs(t - 0.5) < 1e-9 for t in thr) else thr[0]

    per_class = []
    pr_curves = {}
    for c, name in enumerate(names):
        aps = tuple(average_precision(match, c, t) for t in thr)
        n_gt = match.gt_counts.get(c, 0)
        per_class.append(ClassResult(
            class_id=c,
            name=name,
            n_ground_truth=n_gt,
            n_predictions=int((match.class_ids == c).sum()),
            ap_per_threshold=aps,
            ap50=_ap_at(aps, thr, 0.5),
            ap75=_ap_at(aps, thr, 0.75),
            ap50_95=None if n_gt == 0 else float(np.mean(aps)),
        ))
        if n_gt:
            rc, pr = pr_points(match, c, curve_iou)
            pr_curves[c] = interpolated_precision(rc, pr)

    curves = sweep_curves(match, curve_iou, n_curve_points, class_ids=range(len(names)))
    cm = confusion_matrix({i: gts.get(i, ()) for i in ids}, preds, len(names), conf_threshold, confusion_iou)
    meta = dict(metadata or {})
    meta.update(conf_threshold=conf_threshold, confusion_iou=confusion_iou,
                n_curve_points=n_curve_points, n_images=len(ids))
    return EvaluationReport(
        class_names=names,
        iou_thresholds=thr,
        per_class=per_class,
        map50=_mean_or_none([c.ap50 for c in per_class]),
        map75=_mean_or_none([c.ap75 for c in per_class]),
        map50_95=_mean_or_none([c.ap50_95 for c in per_class]),
        curves=curves,
        pr_curves=pr_curves,
        confusion=cm,
        timing=timing_stats(latencies_ms) if latencies_ms is not None else None,
        metadata=meta,
    )
