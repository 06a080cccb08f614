"""
Detection and classification metrics.

Counts come from sklearn's confusion matrix; precision, recall and F1 are
derived here so zero denominators can be reported instead of warned about.
A zero denominator yields 0 and sets `undefined` on the class row.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from src.errors import DataError

logger = logging.getLogger(__name__)

DETECTION_CLASSES: Tuple[str, ...] = ("normal", "anomaly")


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    undefined: bool = False

    @classmethod
    def from_counts(cls, label: str, tp: int, fp: int, fn: int, tn: int) -> "ClassMetrics":
        undefined = False
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision, undefined = 0.0, True
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall, undefined = 0.0, True
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(label, int(tp), int(fp), int(fn), int(tn), precision, recall, f1, undefined)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed by (true class, predicted class)"""
    matrix: np.ndarray
    labels: Tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def class_metrics(self) -> Dict[str, ClassMetrics]:
        """One-vs-rest metrics for every class"""
        total = self.total
        metrics = {}
        for i, label in enumerate(self.labels):
            tp = int(self.matrix[i, i])
            fp = int(self.matrix[:, i].sum()) - tp
            fn = int(self.matrix[i, :].sum()) - tp
            metrics[label] = ClassMetrics.from_counts(label, tp, fp, fn, total - tp - fp - fn)
        return metrics

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.matrix, index=list(self.labels), columns=list(self.labels))
        frame.index.name = "true"
        return frame


def _as_labels(values: Sequence, name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    return array


def confusion(pred: Sequence, truth: Sequence, labels: Sequence) -> ConfusionMatrix:
    pred = _as_labels(pred, "predictions")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise DataError(f"Prediction and truth lengths differ: {len(pred)} vs {len(truth)}")
    matrix = confusion_matrix(truth, pred, labels=list(labels))
    return ConfusionMatrix(matrix.astype(np.int64), tuple(str(label) for label in labels))


def score_detection(pred: Sequence, truth: Sequence, exclude: int = 0) -> Dict[str, ClassMetrics]:
    """
    Normal and anomaly metrics for binary per-step detection.

    pred / truth: truthy = anomaly. The first `exclude` steps are dropped from
    both sides.
    """
    pred = _as_labels(pred, "predictions")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise DataError(f"Prediction and truth lengths differ: {len(pred)} vs {len(truth)}")
    pred = pred[exclude:].astype(bool).astype(np.int8)
    truth = truth[exclude:].astype(bool).astype(np.int8)
    matrix = confusion(pred, truth, labels=[0, 1])
    per_class = matrix.class_metrics()
    return {"normal": per_class["0"], "anomaly": per_class["1"]}


def detection_f1(pred: Sequence, truth: Sequence) -> Tuple[float, float]:
    """(anomaly F1, normal F1)"""
    metrics = score_detection(pred, truth)
    return metrics["anomaly"].f1, metrics["normal"].f1


def overall_f1(metrics: Dict[str, ClassMetrics]) -> float:
    """Mean of normal and anomaly F1"""
    return (metrics["normal"].f1 + metrics["anomaly"].f1) / 2.0


def score_classification(
    pred: Sequence, truth: Sequence, mask: Sequence[bool], labels: Sequence[str]
) -> Tuple[ConfusionMatrix, Dict[str, ClassMetrics]]:
    """
    Confusion matrix and one-vs-rest metrics on the masked steps only
    (normally the ground-truth anomalies).
    """
    pred = _as_labels(pred, "predictions")
    truth = _as_labels(truth, "truth")
    mask = np.asarray(mask, dtype=bool)
    if not (pred.shape == truth.shape == mask.shape):
        raise DataError("Prediction, truth and mask lengths differ")
    if not mask.any():
        raise DataError("Classification mask selects no steps")

    matrix = confusion(pred[mask], truth[mask], labels)
    per_class = matrix.class_metrics()
    for label, m in per_class.items():
        if m.undefined:
            logger.warning("[Metrics] Class '%s' has an undefined precision or recall; reported as 0", label)
    return matrix, per_class


def metrics_frame(metrics: Dict[str, ClassMetrics]) -> pd.DataFrame:
    return pd.DataFrame([m.to_dict() for m in metrics.values()])
