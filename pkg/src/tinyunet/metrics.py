"""Per-class confusion counts and class-averaged IoU, Dice, precision and recall."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

NUM_CLASSES = 11
METRIC_NAMES = ("mean_iou", "mean_dice", "mean_precision", "mean_recall")


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def num_classes(self):
        return self.tp.size

    @property
    def total(self):
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def zeros(cls, num_classes=NUM_CLASSES):
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), z.copy())


def confusion_matrix(pred, truth, num_classes=NUM_CLASSES):
    """``(truth, pred)`` pixel count matrix, int64."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricsError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    p = pred.astype(np.int64).ravel()
    t = truth.astype(np.int64).ravel()
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_classes):
        raise MetricsError(f"class ids must lie in 0..{num_classes - 1}")
    return np.bincount(t * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


def confusion(pred, truth, num_classes=NUM_CLASSES) -> ConfusionCounts:
    cm = confusion_matrix(pred, truth, num_classes)
    tp = np.diag(cm).copy()
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = cm.sum() - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _class_mean(num, den, absent="exclude"):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    present = den > 0
    ratios = np.divide(num, den, out=np.zeros_like(num), where=present)
    if absent == "zero":
        return float(ratios.mean())
    if absent != "exclude":
        raise ValueError(f"unknown absent-class rule {absent!r}")
    if not present.any():
        raise MetricsError("every class is absent from both prediction and truth")
    return float(ratios[present].mean())


def per_class(counts: ConfusionCounts):
    """Dict of per-class ratio arrays; NaN where the denominator is zero."""
    tp, fp, fn = (a.astype(np.float64) for a in (counts.tp, counts.fp, counts.fn))
    with np.errstate(invalid="ignore", divide="ignore"):
        return {
            "iou": tp / (tp + fp + fn),
            "dice": 2 * tp / (2 * tp + fp + fn),
            "precision": tp / (tp + fp),
            "recall": tp / (tp + fn),
        }


def mean_iou(counts: ConfusionCounts, absent="exclude"):
    return _class_mean(counts.tp, counts.tp + counts.fp + counts.fn, absent)


def mean_precision(counts: ConfusionCounts, absent="exclude"):
    return _class_mean(counts.tp, counts.tp + counts.fp, absent)


def mean_recall(counts: ConfusionCounts, absent="exclude"):
    return _class_mean(counts.tp, counts.tp + counts.fn, absent)


def mean_dice(counts: ConfusionCounts, absent="exclude"):
    return _class_mean(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, absent)


@dataclass
class MetricsReport:
    mean_iou: float
    mean_dice: float
    mean_precision: float
    mean_recall: float
    per_class: dict = field(default_factory=dict)
    absent_classes: int = 0

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, absent="exclude"):
        pc = per_class(counts)
        return cls(
            mean_iou(counts, absent), mean_dice(counts, absent),
            mean_precision(counts, absent), mean_recall(counts, absent),
            {k: [None if np.isnan(v) else float(v) for v in arr] for k, arr in pc.items()},
            int(np.sum((counts.tp + counts.fp + counts.fn) == 0)),
        )

    def to_dict(self):
        return {
            "mean_iou": self.mean_iou, "mean_dice": self.mean_dice,
            "mean_precision": self.mean_precision, "mean_recall": self.mean_recall,
            "absent_classes": self.absent_classes, "per_class": self.per_class,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["mean_iou"], d["mean_dice"], d["mean_precision"], d["mean_recall"],
                   d.get("per_class", {}), d.get("absent_classes", 0))

    def csv_fields(self, prefix=""):
        return {f"{prefix}{name[5:]}": getattr(self, name) for name in METRIC_NAMES}


def evaluate_maps(pred, truth, absent="exclude") -> MetricsReport:
    return MetricsReport.from_counts(confusion(pred, truth), absent)
