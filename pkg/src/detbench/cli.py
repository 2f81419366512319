"""Command-line front end: ``detbench evaluate|compare|augment-preview``."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .augmentation import AugmentationConfig, ImageSample, apply_pipeline
from .dataset_io import Dataset, load_dataset, load_predictions, write_label_file
from .exceptions import ConfigError, DataError, DecodeError, DetbenchError, EmptyListError, MissingFile
from .metrics import COCO_IOU_THRESHOLDS, EvaluationReport, _check_thresholds, evaluate
from .report import ComparisonTable, dumps_json, report_files, write_files

logger = logging.getLogger("detbench")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 2, 3


@dataclass
class ModelSource:
    name: str
    predictions: Path
    latencies: Optional[Path] = None


@dataclass
class RunConfig:
    dataset: Path
    dataset_ref: str
    models: List[ModelSource]
    iou_thresholds: Tuple[float, ...] = COCO_IOU_THRESHOLDS
    curve_points: int = 1000
    conf_threshold: float = 0.25
    confusion_iou: float = 0.45
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    out: Path = Path("out")
    seed: int = 0
    strict: bool = True

    @classmethod
    def from_file(cls, path, seed: Optional[int] = None, out: Optional[str] = None,
                  strict: Optional[bool] = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw, path.parent, seed=seed, out=out, strict=strict)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path("."), seed: Optional[int] = None,
                  out: Optional[str] = None, strict: Optional[bool] = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if "dataset" not in raw:
            raise ConfigError("config needs a 'dataset' manifest path")
        models_raw = raw.get("models", {})
        if isinstance(models_raw, dict):
            models_raw = [dict(v, name=k) for k, v in models_raw.items()]
        models = []
        for m in models_raw:
            if "name" not in m or "predictions" not in m:
                raise ConfigError(f"model entry needs 'name' and 'predictions': {m}")
            lat = m.get("latencies")
            models.append(ModelSource(m["name"], base / m["predictions"], base / lat if lat else None))
        try:
            thresholds = _check_thresholds(raw.get("iou_thresholds", COCO_IOU_THRESHOLDS))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        curve_points = int(raw.get("curve_points", 1000))
        if curve_points < 2:
            raise ConfigError("curve_points must be >= 2")
        conf, ciou = float(raw.get("conf_threshold", 0.25)), float(raw.get("confusion_iou", 0.45))
        if not (0 < conf < 1 and 0 < ciou < 1):
            raise ConfigError("conf_threshold and confusion_iou must lie in (0, 1)")
        run_seed = int(raw.get("seed", 0)) if seed is None else seed
        aug = dict(raw.get("augmentation", {}))
        aug.setdefault("seed", run_seed)
        if seed is not None:
            aug["seed"] = seed
        try:
            aug_cfg = AugmentationConfig.from_dict(aug)
        except TypeError as exc:
            raise ConfigError(f"bad augmentation config: {exc}") from None
        return cls(
            dataset=base / raw["dataset"],
            dataset_ref=str(raw["dataset"]),
            models=models,
            iou_thresholds=thresholds,
            curve_points=curve_points,
            conf_threshold=conf,
            confusion_iou=ciou,
            augmentation=aug_cfg,
            out=Path(out) if out is not None else base / raw.get("out", "out"),
            seed=run_seed,
            strict=bool(raw.get("strict", True)) if strict is None else strict,
        )


def read_latencies(path: Path) -> List[float]:
    if not path.is_file():
        raise MissingFile(f"latency file not found: {path}")
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            v = float(line)
        except ValueError:
            raise DataError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not v > 0:
            raise DataError(f"{path}:{lineno}: latency must be positive")
        values.append(v)
    if not values:
        raise DataError(f"{path}: no latencies")
    return values


def evaluate_model(cfg: RunConfig, dataset: Dataset, model: ModelSource) -> EvaluationReport:
    preds = load_predictions(model.predictions, dataset, strict=cfg.strict)
    gts = {r.image_id: list(r.ground_truth) for r in dataset.records}
    latencies = read_latencies(model.latencies) if model.latencies is not None else None
    t0 = time.perf_counter()
    report = evaluate(
        gts, preds, dataset.classes.names,
        iou_thresholds=cfg.iou_thresholds,
        n_curve_points=cfg.curve_points,
        conf_threshold=cfg.conf_threshold,
        confusion_iou=cfg.confusion_iou,
        latencies_ms=latencies,
        image_ids=dataset.ids,
        metadata={"dataset": cfg.dataset_ref, "model": model.name, "seed": cfg.seed,
                  "detbench_version": __version__},
    )
    elapsed = time.perf_counter() - t0
    if dataset.records:
        logger.info("evaluated %s: %d images in %.3f s (%.1f images/s)", model.name,
                    len(dataset.records), elapsed, len(dataset.records) / max(elapsed, 1e-9))
    return report


def _load(cfg: RunConfig) -> Dataset:
    dataset = load_dataset(cfg.dataset, strict=cfg.strict)
    if not dataset.records:
        raise DataError(f"dataset {cfg.dataset} contains no images")
    return dataset


class _Staging:
    """Collects outputs in a scratch directory and publishes them only on success."""

    def __init__(self, out: Path):
        self.out = out

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".detbench-", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for item in sorted(self.tmp.iterdir()):
                    target = self.out / item.name
                    if target.is_dir():
                        shutil.rmtree(target)
                    shutil.move(str(item), str(target))
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def cmd_evaluate(cfg: RunConfig, model_name: Optional[str] = None) -> EvaluationReport:
    if not cfg.models:
        raise ConfigError("config lists no prediction sources")
    if model_name is None:
        model = cfg.models[0]
    else:
        matches = [m for m in cfg.models if m.name == model_name]
        if not matches:
            raise ConfigError(f"no model named {model_name!r} in config")
        model = matches[0]
    dataset = _load(cfg)
    report = evaluate_model(cfg, dataset, model)
    with _Staging(cfg.out) as tmp:
        write_files(tmp, report_files(report))
    return report


def cmd_compare(cfg: RunConfig) -> ComparisonTable:
    if len(cfg.models) < 2:
        raise ConfigError("compare needs at least two models")
    dataset = _load(cfg)
    reports = {m.name: evaluate_model(cfg, dataset, m) for m in cfg.models}
    table = ComparisonTable.from_reports(reports)
    with _Staging(cfg.out) as tmp:
        write_files(tmp, {"compare.json": table.to_json(), "compare.csv": table.to_csv()})
    return table


def _read_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from None


class _SamplePool:
    """Lazily decoded dataset images, indexable like a sequence."""

    def __init__(self, dataset: Dataset):
        self.records = dataset.records
        self._cache: Dict[int, ImageSample] = {}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i: int) -> ImageSample:
        if i not in self._cache:
            rec = self.records[i]
            pixels = _read_image(rec.image_path)
            if pixels.shape[1] != rec.width or pixels.shape[0] != rec.height:
                raise DataError(f"{rec.image_path}: decoded size {pixels.shape[1]}x{pixels.shape[0]} "
                                f"differs from declared {rec.width}x{rec.height}")
            self._cache[i] = ImageSample(rec.image_id, pixels, rec.ground_truth)
        return self._cache[i]


def cmd_augment_preview(cfg: RunConfig, n: int) -> List[dict]:
    from PIL import Image

    if n < 0:
        raise ConfigError("n must be non-negative")
    index = []
    with _Staging(cfg.out) as tmp:
        if n > 0:
            pool = _SamplePool(_load(cfg))
            for k in range(n):
                src = pool[k % len(pool)]
                rnd = k // len(pool)
                sample = src if rnd == 0 else ImageSample(f"{src.image_id}@{rnd}", src.pixels, src.boxes)
                out, params = apply_pipeline(sample, cfg.augmentation, pool, return_params=True)
                stem = f"aug_{k:05d}_{src.image_id}"
                Image.fromarray(out.pixels).save(tmp / f"{stem}.png")
                write_label_file(tmp / f"{stem}.txt", out.boxes, out.width, out.height)
                index.append({"index": k, "source": src.image_id, "image": f"{stem}.png",
                              "labels": f"{stem}.txt", "params": params.to_dict()})
        (tmp / "index.json").write_text(dumps_json({"augmentation": cfg.augmentation.to_dict(),
                                                    "samples": index}), encoding="utf-8")
    return index


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detbench", description="Object-detection benchmarking toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--strict", dest="strict", action="store_true", default=None,
                          help="fail on any malformed or unmatched file (default)")
        mode.add_argument("--lenient", dest="strict", action="store_false",
                          help="skip malformed lines and unmatched files with a warning")
        p.add_argument("-v", "--verbose", action="store_true")

    ev = sub.add_parser("evaluate", help="evaluate one prediction set against the dataset")
    common(ev)
    ev.add_argument("--model", default=None, help="model name from the config (default: first)")
    cmp_ = sub.add_parser("compare", help="compare several models in one table")
    common(cmp_)
    aug = sub.add_parser("augment-preview", help="write augmented samples with labels")
    common(aug)
    aug.add_argument("-n", type=int, default=8, help="number of samples to write")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config, seed=args.seed, out=args.out, strict=args.strict)
        if args.command == "evaluate":
            report = cmd_evaluate(cfg, args.model)
            print(f"mAP@0.5={report.map50} mAP@0.5:0.95={report.map50_95} -> {cfg.out}")
        elif args.command == "compare":
            table = cmd_compare(cfg)
            sys.stdout.write(table.to_csv())
        else:
            index = cmd_augment_preview(cfg, args.n)
            print(f"wrote {len(index)} augmented samples to {cfg.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EmptyListError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DetbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
