"""Report files: JSON/CSV serialization, SVG plots and model comparison tables."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .exceptions import TooFewSamples
from .metrics import RECALL_GRID, SCHEMA_VERSION, CurveSample, EvaluationReport

PLOT_LEFT, PLOT_TOP, PLOT_W, PLOT_H = 60, 30, 400, 300
SVG_W, SVG_H = 640, 380
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
ALL_COLOR = "#0000ff"

_KIND_AXES = {
    "pr": ("Recall", "Precision", "Precision-Recall"),
    "f1": ("Confidence", "F1", "F1-Confidence"),
    "p": ("Confidence", "Precision", "Precision-Confidence"),
    "r": ("Confidence", "Recall", "Recall-Confidence"),
}


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def curves_csv(report: EvaluationReport) -> str:
    """All-class confidence sweep: ``threshold,precision,recall,f1`` per line."""
    c = report.curves
    rows = ((repr(float(t)), repr(float(p)), repr(float(r)), repr(float(f)))
            for t, p, r, f in zip(c.thresholds, c.all_precision, c.all_recall, c.all_f1))
    return _csv_text(("threshold", "precision", "recall", "f1"), rows)


def curves_per_class_csv(report: EvaluationReport) -> str:
    c = report.curves
    rows = []
    for cls in sorted(c.precision):
        name = report.class_names[cls]
        for t, p, r, f in zip(c.thresholds, c.precision[cls], c.recall[cls], c.f1[cls]):
            rows.append((name, repr(float(t)), repr(float(p)), repr(float(r)), repr(float(f))))
    return _csv_text(("class", "threshold", "precision", "recall", "f1"), rows)


def confusion_csv(report: EvaluationReport) -> str:
    """Row-normalized confusion matrix; rows true class, columns predicted."""
    labels = list(report.class_names) + ["background"]
    norm = report.confusion.normalized
    rows = ([labels[i]] + [repr(float(v)) for v in norm[i]] for i in range(len(labels)))
    return _csv_text(["true\\predicted"] + labels, rows)


# ---------------------------------------------------------------------------
# SVG


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _map_point(x: float, y: float):
    return PLOT_LEFT + x * PLOT_W, PLOT_TOP + (1.0 - y) * PLOT_H


def _axes(svg: List[str], xlabel: str, ylabel: str, title: str) -> None:
    x0, y0 = _map_point(0, 0)
    x1, y1 = _map_point(1, 1)
    svg.append(f'<rect x="{_fmt(x0)}" y="{_fmt(y1)}" width="{PLOT_W}" height="{PLOT_H}" '
               f'fill="none" stroke="#333333"/>')
    for k in range(6):
        v = k / 5
        tx, ty = _map_point(v, 0)
        svg.append(f'<text x="{_fmt(tx)}" y="{_fmt(ty + 16)}" font-size="11" text-anchor="middle">{v:.1f}</text>')
        lx, ly = _map_point(0, v)
        svg.append(f'<text x="{_fmt(lx - 6)}" y="{_fmt(ly + 4)}" font-size="11" text-anchor="end">{v:.1f}</text>')
    svg.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{_fmt(y0 + 34)}" font-size="13" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    svg.append(f'<text x="16" y="{_fmt((y0 + y1) / 2)}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {_fmt((y0 + y1) / 2)})">{escape(ylabel)}</text>')
    svg.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')


def render_curve_svg(samples: Sequence[CurveSample], kind: str,
                     class_names: Optional[Mapping[int, str]] = None,
                     annotation: Optional[str] = None) -> str:
    """Standalone SVG with one polyline per class plus the all-class curve.

    For ``kind="pr"`` each sample's ``recall`` is the x value; otherwise the
    confidence threshold is.  The legend's all-class entry carries the argmax
    annotation (best F1, peak precision/recall, or mean precision for PR).
    """
    if kind not in _KIND_AXES:
        raise ValueError(f"kind must be one of {sorted(_KIND_AXES)}, got {kind!r}")
    if len(samples) < 2:
        raise TooFewSamples("a curve needs at least two samples")
    names = dict(class_names or {})
    groups: Dict[Optional[int], List[CurveSample]] = {}
    for s in samples:
        groups.setdefault(s.class_id, []).append(s)

    def xy(s: CurveSample):
        if kind == "pr":
            return s.recall, s.precision
        return s.confidence_threshold, {"f1": s.f1, "p": s.precision, "r": s.recall}[kind]

    xlabel, ylabel, title = _KIND_AXES[kind]
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
           f'viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif">',
           f'<rect width="{SVG_W}" height="{SVG_H}" fill="#ffffff"/>']
    _axes(svg, xlabel, ylabel, title)

    legend = []
    keys = sorted((k for k in groups if k is not None)) + ([None] if None in groups else [])
    for i, key in enumerate(keys):
        pts = [xy(s) for s in groups[key]]
        coords = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in (_map_point(x, y) for x, y in pts))
        if key is None:
            color, width = ALL_COLOR, 3
            label = "all classes"
            if annotation is None:
                annotation = _default_annotation(kind, pts)
            if annotation:
                label = f"{label} {annotation}"
        else:
            color, width = PALETTE[key % len(PALETTE)], 1
            label = names.get(key, f"class {key}")
        svg.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{coords}"/>')
        legend.append((color, label))

    lx = PLOT_LEFT + PLOT_W + 14
    for i, (color, label) in enumerate(legend):
        y = PLOT_TOP + 12 + 18 * i
        svg.append(f'<line x1="{lx}" y1="{y - 4}" x2="{lx + 18}" y2="{y - 4}" stroke="{color}" stroke-width="3"/>')
        svg.append(f'<text x="{lx + 24}" y="{y}" font-size="11">{escape(label)}</text>')
    svg.append("</svg>")
    return "\n".join(svg) + "\n"


def _default_annotation(kind: str, pts) -> str:
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if kind == "pr":
        return f"{float(np.mean(ys)):.3f} mAP@0.5"
    i = int(np.argmax(ys))
    return f"{ys[i]:.2f} at {xs[i]:.3f}"


def render_confusion_svg(normalized: np.ndarray, labels: Sequence[str], title: str = "Normalized Confusion Matrix") -> str:
    n = len(labels)
    cell = 56
    left, top = 110, 40
    w = left + n * cell + 20
    h = top + n * cell + 90
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
           f'font-family="sans-serif">', f'<rect width="{w}" height="{h}" fill="#ffffff"/>',
           f'<text x="{w / 2:.1f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>']
    for i in range(n):
        for j in range(n):
            v = float(normalized[i, j])
            shade = int(round(255 - 200 * v))
            fill = f"#{shade:02x}{shade:02x}ff"
            x, y = left + j * cell, top + i * cell
            svg.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#cccccc"/>')
            color = "#ffffff" if v > 0.6 else "#000000"
            svg.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" font-size="11" '
                       f'text-anchor="middle" fill="{color}">{v:.2f}</text>')
    for i, lab in enumerate(labels):
        svg.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{escape(lab)}</text>')
        x = left + i * cell + cell / 2
        y = top + n * cell + 12
        svg.append(f'<text x="{x:.1f}" y="{y}" font-size="11" text-anchor="end" '
                   f'transform="rotate(-45 {x:.1f} {y})">{escape(lab)}</text>')
    svg.append(f'<text x="14" y="{top + n * cell / 2:.1f}" font-size="12">True</text>')
    svg.append(f'<text x="{left + n * cell / 2:.1f}" y="{h - 8}" font-size="12" text-anchor="middle">Predicted</text>')
    svg.append("</svg>")
    return "\n".join(svg) + "\n"


def pr_samples(report: EvaluationReport) -> List[CurveSample]:
    """Interpolated PR envelopes (IoU 0.5) per class plus their mean."""
    out = []
    for cls, prec in sorted(report.pr_curves.items()):
        out.extend(CurveSample(0.0, float(p), float(r), 0.0, cls) for r, p in zip(RECALL_GRID, prec))
    if report.pr_curves:
        mean = np.mean(list(report.pr_curves.values()), axis=0)
        out.extend(CurveSample(0.0, float(p), float(r), 0.0, None) for r, p in zip(RECALL_GRID, mean))
    return out


def report_files(report: EvaluationReport) -> Dict[str, str]:
    """Every evaluate output as ``filename -> text``."""
    names = dict(enumerate(report.class_names))
    sweep = [s for c in sorted(report.curves.precision) for s in report.curves.samples(c)]
    sweep += report.curves.samples(None)
    files = {
        "report.json": dumps_json(report.to_dict()),
        "curves.csv": curves_csv(report),
        "curves_per_class.csv": curves_per_class_csv(report),
        "confusion.csv": confusion_csv(report),
        "f1_curve.svg": render_curve_svg(sweep, "f1", names),
        "p_curve.svg": render_curve_svg(sweep, "p", names),
        "r_curve.svg": render_curve_svg(sweep, "r", names),
        "confusion_matrix.svg": render_confusion_svg(report.confusion.normalized,
                                                     list(report.class_names) + ["background"]),
    }
    pr = pr_samples(report)
    if len(pr) >= 2:
        files["pr_curve.svg"] = render_curve_svg(pr, "pr", names)
    return files


# ---------------------------------------------------------------------------
# comparison tables

COMPARE_COLUMNS = ("model", "map50", "map75", "map50_95", "fps")


@dataclass
class ComparisonTable:
    rows: List[dict]

    @classmethod
    def from_reports(cls, reports: Mapping[str, EvaluationReport]) -> "ComparisonTable":
        rows = []
        for name, rep in reports.items():
            rows.append({
                "model": name,
                "map50": rep.map50,
                "map75": rep.map75,
                "map50_95": rep.map50_95,
                "fps": None if rep.timing is None else rep.timing.fps,
            })
        return cls(rows)

    def to_json(self) -> str:
        return dumps_json({"schema_version": SCHEMA_VERSION, "columns": list(COMPARE_COLUMNS), "rows": self.rows})

    def to_csv(self) -> str:
        def cell(v):
            if v is None:
                return "n/a"
            return v if isinstance(v, str) else f"{v:.4f}"
        return _csv_text(COMPARE_COLUMNS, ([cell(r[c]) for c in COMPARE_COLUMNS] for r in self.rows))


def write_files(out_dir, files: Mapping[str, str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
