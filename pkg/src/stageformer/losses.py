"""Losses for the three heads, groundtruth segment targets, and the
evaluation metrics (global accuracy plus per-class precision/recall)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as td
from .tensor import Tensor
from .heads import FramePrediction, SegmentPrediction

LOG_CLAMP = 1e-12


class MonotonicityError(ValueError):
    """Raised when a label sequence steps back to an earlier stage."""


@dataclass
class SegmentTargets:
    widths: np.ndarray              # (C,), simplex (stages absent get 0)
    centers: np.ndarray             # (C,)


@dataclass
class MetricsReport:
    global_accuracy: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    avg_precision: float
    avg_recall: float
    support: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "global_accuracy": self.global_accuracy,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "avg_precision": self.avg_precision,
            "avg_recall": self.avg_recall,
            "support": self.support,
        }


def check_monotone(labels: np.ndarray) -> None:
    steps = np.diff(labels)
    bad = np.nonzero(steps < 0)[0]
    if bad.size:
        raise MonotonicityError(
            f"labels decrease at index {int(bad[0]) + 1}")


def segment_targets(labels, num_stages: int) -> SegmentTargets:
    """Per-stage width fractions and centers from a monotone label sequence.

    widths_c = (#frames with label c) / T; centers follow the same
    cumsum - width/2 rule as the segmentation head.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_stages:
        raise ValueError(
            f"labels must lie in [0, {num_stages - 1}], got range "
            f"[{labels.min()}, {labels.max()}]")
    check_monotone(labels)
    counts = np.bincount(labels, minlength=num_stages).astype(np.float64)
    widths = counts / labels.size
    centers = np.cumsum(widths) - widths / 2.0
    return SegmentTargets(widths=widths, centers=centers)


def _frame_nll(probs: Tensor, labels: np.ndarray, mean: bool) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != labels.size:
        raise td.ShapeError(
            f"{probs.shape[0]} predicted rows vs {labels.size} labels")
    logp = td.log(probs, clamp=LOG_CLAMP)
    picked = logp[np.arange(labels.size), labels]
    total = -picked.sum()
    return total * (1.0 / labels.size) if mean else total


def cls_loss(pred: FramePrediction, labels, mean: bool = True) -> Tensor:
    """Cross-entropy of the classification head.

    ``mean=True`` (default) averages over frames to keep magnitudes
    comparable across sequence lengths; ``mean=False`` is the plain
    per-frame sum.  Zero probabilities are clamped at 1e-12 before log.
    """
    return _frame_nll(pred.probs, labels, mean)


def col_loss(pred: FramePrediction, labels, mean: bool = True) -> Tensor:
    """Cross-entropy of the collaboration head; same contract as cls_loss."""
    return _frame_nll(pred.probs, labels, mean)


def seg_loss(pred: SegmentPrediction, target: SegmentTargets) -> Tensor:
    """L1 distance on widths plus L1 distance on centers."""
    if pred.widths.shape[0] != target.widths.shape[0]:
        raise td.ShapeError(
            f"{pred.widths.shape[0]} predicted stages vs "
            f"{target.widths.shape[0]} target stages")
    dw = td.absolute(pred.widths - target.widths).sum()
    dc = td.absolute(pred.centers - target.centers).sum()
    return dw + dc


@dataclass
class LossToggles:
    cls: bool = True
    seg: bool = True
    col: bool = True


def total_loss(cls_pred: FramePrediction | None,
               seg_pred: SegmentPrediction | None,
               col_pred: FramePrediction | None,
               labels, target: SegmentTargets,
               toggles: LossToggles = LossToggles(),
               mean: bool = True) -> tuple[Tensor, dict[str, float]]:
    """Unweighted sum of the enabled component losses.

    Returns the scalar loss plus a float breakdown for reporting.  A head
    toggled off contributes neither loss nor gradient.
    """
    parts: dict[str, float] = {}
    total: Tensor | None = None
    if toggles.cls:
        l = cls_loss(cls_pred, labels, mean)
        parts["cls"] = l.item()
        total = l if total is None else total + l
    if toggles.seg:
        l = seg_loss(seg_pred, target)
        parts["seg"] = l.item()
        total = l if total is None else total + l
    if toggles.col:
        l = col_loss(col_pred, labels, mean)
        parts["col"] = l.item()
        total = l if total is None else total + l
    if total is None:
        raise ValueError("all loss heads toggled off")
    parts["total"] = total.item()
    return total, parts


def compute_metrics(pred_labels, true_labels, num_stages: int) -> MetricsReport:
    """Global accuracy and per-class precision/recall.

    Precision/recall are 0 when their denominator is 0; the averages run
    over classes with groundtruth support only.
    """
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(
            f"prediction length {pred.shape} != groundtruth length {true.shape}")
    acc = float(np.mean(pred == true)) if true.size else 0.0
    precision, recall, support = [], [], []
    for c in range(num_stages):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        precision.append(tp / (tp + fp) if tp + fp else 0.0)
        recall.append(tp / (tp + fn) if tp + fn else 0.0)
        support.append(tp + fn)
    supported = [c for c in range(num_stages) if support[c] > 0]
    avg_p = float(np.mean([precision[c] for c in supported])) if supported else 0.0
    avg_r = float(np.mean([recall[c] for c in supported])) if supported else 0.0
    return MetricsReport(global_accuracy=acc,
                         per_class_precision=precision,
                         per_class_recall=recall,
                         avg_precision=avg_p, avg_recall=avg_r,
                         support=support)
