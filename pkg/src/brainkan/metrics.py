"""Binary classification metrics, ROC curves, and AUC.

AUC is the trapezoidal area under the tie-grouped ROC curve, which equals
the Mann-Whitney statistic U/(n_pos * n_neg) with ties counted half. Metrics
with a zero denominator are reported as 0 and flagged so downstream CSV/JSON
stays numeric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class UndefinedAUCError(ValueError):
    """AUC requested with only one class present."""


@dataclass
class MetricsReport:
    acc: float
    auc: float
    f1: float
    precision: float
    sensitivity: float
    specificity: float
    confusion: tuple[int, int, int, int]  # (tp, fp, fn, tn)
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    undefined: tuple[str, ...] = ()  # metrics reported as 0 for a zero denominator

    def as_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "f1": self.f1,
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "confusion": list(self.confusion),
            "undefined": list(self.undefined),
        }


METRIC_NAMES = ("acc", "auc", "f1", "precision", "sensitivity", "specificity")


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores/labels shape mismatch: {scores.shape} vs {labels.shape}")
    if scores.size < 1:
        raise ValueError("need at least one sample")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ValueError("scores must be probabilities in [0, 1]")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) points from (0,0) to (1,1), thresholds swept over tied groups."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve."""
    points = roc_curve(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def compute_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Confusion at ``threshold`` (positive iff score >= threshold) plus
    threshold-free AUC/ROC."""
    scores, labels = _validate(scores, labels)
    pred = scores >= threshold
    actual = labels.astype(bool)
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    tn = int(np.sum(~pred & ~actual))

    undefined: list[str] = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    sensitivity = ratio(tp, tp + fn, "sensitivity")
    specificity = ratio(tn, tn + fp, "specificity")
    f1 = ratio(2.0 * precision * sensitivity, precision + sensitivity, "f1")
    acc = (tp + tn) / labels.size

    if actual.all() or not actual.any():
        undefined.append("auc")
        auc_value = 0.0
        points = [(0.0, 0.0), (1.0, 1.0)]
    else:
        points = roc_curve(scores, labels)
        auc_value = 0.0
        for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
            auc_value += (x1 - x0) * (y0 + y1) / 2.0

    return MetricsReport(
        acc=acc,
        auc=auc_value,
        f1=f1,
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        confusion=(tp, fp, fn, tn),
        roc_points=points,
        undefined=tuple(undefined),
    )


def export_roc(named_reports, path) -> None:
    """Write (model_name, fpr, tpr) rows for one or more reports."""
    items = list(named_reports.items()) if isinstance(named_reports, dict) else list(named_reports)
    if not items:
        raise ValueError("export_roc needs at least one report")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_name", "fpr", "tpr"])
        for name, report in items:
            for fpr, tpr in report.roc_points:
                writer.writerow([name, repr(fpr), repr(tpr)])


def read_roc_csv(path) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["model_name", "fpr", "tpr"]:
            raise ValueError(f"{path}: unexpected ROC CSV header {header}")
        for name, fpr, tpr in reader:
            out.setdefault(name, []).append((float(fpr), float(tpr)))
    return out
