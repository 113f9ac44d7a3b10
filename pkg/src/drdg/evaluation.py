"""Confusion-matrix segmentation metrics and report rendering."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from drdg.data_model import CLASS_NAMES
from drdg.errors import ConfigError, DataError, MissingFileError, RangeError, ShapeMismatchError
from drdg.ingestion.manifest import DatasetManifest
from drdg.ingestion.raster import read_raster


@dataclass
class ConfusionMatrix:
    """Counts with entry (i, j) = pixels of ground-truth class i predicted as j."""

    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def accumulate(self, pred, gt, mask: Optional[np.ndarray] = None) -> "ConfusionMatrix":
        """Add the per-pixel (gt, pred) pairs of one tile, optionally restricted to ``mask``."""
        pred = np.asarray(getattr(pred, "data", pred))
        gt = np.asarray(getattr(gt, "data", gt))
        if pred.shape != gt.shape:
            raise ShapeMismatchError("prediction", gt.shape, pred.shape)
        c = self.num_classes
        for name, a in (("prediction", pred), ("ground truth", gt)):
            if a.size and (a.min() < 0 or a.max() >= c):
                raise RangeError(name, 0, c - 1, a.min(), a.max())
        if mask is not None:
            pred, gt = pred[mask], gt[mask]
        flat = gt.astype(np.int64).ravel() * c + pred.astype(np.int64).ravel()
        self.counts += np.bincount(flat, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ConfigError("cannot merge matrices with different class counts")
        return ConfusionMatrix(self.counts + other.counts)

    __add__ = merge

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _tp_fp_fn(cm: ConfusionMatrix):
    m = cm.counts.astype(np.float64)
    tp = np.diag(m)
    return tp, m.sum(axis=0) - tp, m.sum(axis=1) - tp


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn = _tp_fp_fn(cm)
    den = tp + fp + fn
    return np.divide(tp, den, out=np.zeros_like(tp), where=den > 0)


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Harmonic mean of precision and recall, computed as 2TP / (2TP + FP + FN)."""
    tp, fp, fn = _tp_fp_fn(cm)
    den = 2 * tp + fp + fn
    return np.divide(2 * tp, den, out=np.zeros_like(tp), where=den > 0)


@dataclass
class EvalReport:
    iou: List[float]
    f1: List[float]
    miou: float
    mean_f1: float
    per_seed: List[Dict] = field(default_factory=list)
    class_names: List[str] = field(default_factory=lambda: list(CLASS_NAMES))

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> "EvalReport":
        iou, f1 = iou_per_class(cm), f1_per_class(cm)
        names = list(class_names) if class_names is not None else (
            list(CLASS_NAMES) if cm.num_classes == len(CLASS_NAMES) else [f"class_{i}" for i in range(cm.num_classes)]
        )
        return cls(iou.tolist(), f1.tolist(), float(iou.mean()), float(f1.mean()), [], names)

    def to_dict(self) -> dict:
        return {
            "iou": self.iou, "f1": self.f1, "miou": self.miou, "mean_f1": self.mean_f1,
            "per_seed": self.per_seed, "class_names": self.class_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def aggregate_seeds(reports: Sequence[EvalReport]) -> EvalReport:
    """Arithmetic mean of every metric across seeds; per-seed values are kept."""
    if not reports:
        raise ConfigError("no reports to aggregate")
    n = {len(r.iou) for r in reports}
    if len(n) != 1:
        raise ConfigError(f"reports disagree on class count: {sorted(n)}")
    iou = np.mean([r.iou for r in reports], axis=0)
    f1 = np.mean([r.f1 for r in reports], axis=0)
    per_seed = [{"iou": list(r.iou), "f1": list(r.f1), "miou": r.miou, "mean_f1": r.mean_f1} for r in reports]
    return EvalReport(iou.tolist(), f1.tolist(), float(np.mean([r.miou for r in reports])),
                      float(np.mean([r.mean_f1 for r in reports])), per_seed, list(reports[0].class_names))


def render_table(rows: Dict[str, EvalReport], percent: bool = True) -> str:
    """Text table with per-class IoU/F1 columns and overall mIoU / mean F1."""
    if not rows:
        return ""
    names = next(iter(rows.values())).class_names
    scale = 100.0 if percent else 1.0
    head = ["method"] + [f"{n}:{m}" for n in names for m in ("IoU", "F1")] + ["mIoU", "meanF1"]
    lines = ["\t".join(head)]
    for label, r in rows.items():
        cells = [label]
        for i, f in zip(r.iou, r.f1):
            cells += [f"{scale * i:.2f}", f"{scale * f:.2f}"]
        cells += [f"{scale * r.miou:.2f}", f"{scale * r.mean_f1:.2f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def evaluate_predictions(pred_dir: str | Path, gt_manifest: DatasetManifest) -> tuple[EvalReport, ConfusionMatrix]:
    """Score ``<tile_id>.png`` label rasters against a labelled manifest.

    Pixels shared by overlapping edge tiles of one scene are counted once,
    using the first tile (in manifest order) that covers them.
    """
    pred_dir = Path(pred_dir)
    cm = ConfusionMatrix.empty(gt_manifest.domain.class_count)
    coverage: Dict[str, np.ndarray] = {}
    for ref in gt_manifest.samples:
        if ref.label is None:
            raise DataError(f"ground-truth sample {ref.tile_id} has no label")
        p = pred_dir / f"{ref.tile_id}.png"
        if not p.exists():
            raise MissingFileError(f"missing prediction for tile {ref.tile_id}: {p}")
        pred = read_raster(p).astype(np.int64)
        gt = read_raster(ref.label).astype(np.int64)
        mask = None
        if ref.scene_id is not None and ref.offset is not None and ref.scene_hw is not None:
            seen = coverage.setdefault(ref.scene_id, np.zeros(ref.scene_hw, dtype=bool))
            r, c = ref.offset
            win = seen[r: r + gt.shape[0], c: c + gt.shape[1]]
            mask = ~win
            win[:] = True
        cm.accumulate(pred, gt, mask)
    return EvalReport.from_confusion(cm), cm


def write_report(report: EvalReport, path: str | Path, label: str = "model") -> Path:
    """Write ``path`` (JSON) plus a sibling ``.txt`` table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=1))
    path.with_suffix(".txt").write_text(render_table({label: report}))
    return path
