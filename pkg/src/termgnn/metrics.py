"""Classification and segmentation metrics.

ROC-AUC is computed by the trapezoid rule over the threshold sweep,
which for tied scores equals the rank statistic (ties count half).
Average precision is the area under the precision-recall step curve.
Segmentation quality is reported as Dice, IoU and node accuracy from
node-wise confusion counts; two empty masks count as a perfect match.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np


class SingleClassError(ValueError):
    """Scores cannot be ranked when only one class is present."""


@dataclass
class CurveReport:
    kind: str  # "roc" or "pr"
    positive_class: int
    thresholds: list[float]
    xs: list[float]  # roc: false positive rate; pr: recall
    ys: list[float]  # roc: true positive rate; pr: precision
    area: float  # roc: AUC; pr: average precision

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "x", "y"])
            for row in zip(self.thresholds, self.xs, self.ys):
                writer.writerow([f"{v:.12g}" for v in row])

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SegReport:
    dice: float
    iou: float
    node_accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if len(set(labels.tolist())) < 2:
        raise SingleClassError("need at least one sample of each class")
    return scores, labels


def _sweep(scores, labels, positive):
    """Cumulative TP/FP from the highest score down, grouping ties."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = (labels[order] == positive).astype(np.int64)
    boundaries = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(pos)[boundaries]
    fp = np.cumsum(1 - pos)[boundaries]
    return s[boundaries], tp, fp


def roc(scores, labels, positive_class: int = 1) -> CurveReport:
    """ROC curve and AUC; scores are probabilities of the positive class."""
    scores, labels = _check_binary(scores, labels)
    thresholds, tp, fp = _sweep(scores, labels, positive_class)
    n_pos = tp[-1]
    n_neg = fp[-1]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.trapezoid(tpr, fpr))
    return CurveReport(
        kind="roc",
        positive_class=positive_class,
        thresholds=[float("inf")] + thresholds.tolist(),
        xs=fpr.tolist(),
        ys=tpr.tolist(),
        area=auc,
    )


def precision_recall(scores, labels, positive_class: int = 1) -> CurveReport:
    """Precision-recall curve with step-interpolated average precision."""
    scores, labels = _check_binary(scores, labels)
    thresholds, tp, fp = _sweep(scores, labels, positive_class)
    n_pos = tp[-1]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return CurveReport(
        kind="pr",
        positive_class=positive_class,
        thresholds=thresholds.tolist(),
        xs=recall.tolist(),
        ys=precision.tolist(),
        area=ap,
    )


def mean_average_precision(reports) -> float:
    """Mean of the per-class average precisions (exactly two classes)."""
    if len(reports) != 2:
        raise ValueError("expected exactly two per-class reports")
    return float(sum(r.area for r in reports) / 2.0)


def per_class_reports(p_class1, labels, kind="roc") -> tuple[CurveReport, CurveReport]:
    """Reports treating each class in turn as positive.

    p_class1 holds probabilities of class 1; class 0 scores are their
    complements.
    """
    fn = roc if kind == "roc" else precision_recall
    p_class1 = np.asarray(p_class1, dtype=np.float64)
    return fn(1.0 - p_class1, labels, positive_class=0), fn(p_class1, labels, positive_class=1)


def seg_scores(pred_mask, truth_mask) -> SegReport:
    """Dice, IoU and accuracy from per-node binary masks."""
    pred = np.asarray(pred_mask, dtype=np.int64)
    truth = np.asarray(truth_mask, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("masks must be equal-length vectors")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    if tp + fp + fn == 0:
        dice = 1.0
        iou = 1.0
    else:
        dice = 2.0 * tp / (2.0 * tp + fp + fn)
        iou = tp / (tp + fp + fn)
    total = max(pred.size, 1)
    return SegReport(
        dice=dice,
        iou=iou,
        node_accuracy=(tp + tn) / total,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )
