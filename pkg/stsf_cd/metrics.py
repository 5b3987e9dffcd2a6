# stsf_cd/metrics.py
"""
Confusion-matrix metrics: OA, per-class IoU, mIoU, change precision/recall/F1 and
class-averaged F1.

Orientation: counts[i, j] = pixels predicted as class i whose true class is j.
Class 0 is "unchanged"; every other class counts as change for the binary scores.
"""
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InvalidLabelError, ShapeError, UndefinedMetricError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ShapeError(f"Prediction {pred.shape} and truth {truth.shape} differ")
        k = self.num_classes
        for name, arr in (("prediction", pred), ("truth", truth)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise InvalidLabelError(f"{name} labels must lie in 0..{k - 1}")
        flat = pred.astype(np.int64).ravel() * k + truth.astype(np.int64).ravel()
        increment = np.bincount(flat, minlength=k * k).reshape(k, k)
        return ConfusionMatrix(self.counts + increment)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise ShapeError("Cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray) -> ConfusionMatrix:
    return cm.accumulate(pred, truth)


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("Overall accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """IoU_i = x_ii / (row_i + col_i - x_ii); NaN where the class is absent on both sides."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - tp
    iou = np.full(cm.num_classes, np.nan)
    defined = union > 0
    iou[defined] = tp[defined] / union[defined]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    iou = iou_per_class(cm)
    defined = iou[~np.isnan(iou)]
    if defined.size == 0:
        raise UndefinedMetricError("No class has a defined IoU")
    return float(defined.mean())


def f1_bcd(cm: ConfusionMatrix) -> Tuple[float, float, float]:
    """(precision, recall, F1) of change vs no-change; 0/0 counts as 0."""
    x = cm.counts
    tp = int(x[1:, 1:].sum())
    fp = int(x[1:, 0].sum())
    fn = int(x[0, 1:].sum())
    return _ratio(tp, tp + fp), _ratio(tp, tp + fn), _ratio(2 * tp, 2 * tp + fp + fn)


def f1_clf(cm: ConfusionMatrix) -> float:
    """Mean over all classes of 2TP / (2TP + FP + FN), with 0/0 -> 0."""
    x = cm.counts
    tp = np.diag(x).astype(np.float64)
    fp = x.sum(axis=1) - tp
    fn = x.sum(axis=0) - tp
    den = 2 * tp + fp + fn
    scores = np.divide(2 * tp, den, out=np.zeros_like(tp), where=den > 0)
    return float(scores.mean())


@dataclass
class MetricsReport:
    oa: float
    miou: float
    iou_per_class: List[Optional[float]]
    precision_c: float
    recall_c: float
    f1_bcd: float
    f1_clf: float
    pixel_total: int

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def evaluate(cm: ConfusionMatrix) -> MetricsReport:
    precision, recall, f1 = f1_bcd(cm)
    iou = iou_per_class(cm)
    return MetricsReport(
        oa=overall_accuracy(cm),
        miou=miou(cm),
        iou_per_class=[None if math.isnan(v) else float(v) for v in iou],
        precision_c=precision,
        recall_c=recall,
        f1_bcd=f1,
        f1_clf=f1_clf(cm),
        pixel_total=cm.total,
    )
