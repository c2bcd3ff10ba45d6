"""
Per-image segmentation metrics, macro aggregation, and ROC/PR curves.

Empty-mask convention: when both the ground truth and the thresholded
prediction are empty every metric is 1; when exactly one is empty a metric
whose denominator vanishes is 0.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import CurveError, ShapeError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("dice", "iou", "recall", "precision")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ImageMetrics:
    dice: float
    iou: float
    recall: float
    precision: float
    image_id: str = ""

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(pred, target, threshold: float = 0.5) -> ConfusionCounts:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"confusion shape mismatch: prediction {pred.shape}, target {target.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    p = pred >= threshold
    g = target > 0.5
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=int(p.size) - tp - fp - fn)


def _ratio(num: int, den: int, both_empty: bool) -> float:
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def image_metrics(counts: ConfusionCounts, image_id: str = "") -> ImageMetrics:
    both_empty = counts.tp + counts.fp + counts.fn == 0
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return ImageMetrics(
        dice=_ratio(2 * tp, 2 * tp + fp + fn, both_empty),
        iou=_ratio(tp, tp + fp + fn, both_empty),
        recall=_ratio(tp, tp + fn, both_empty),
        precision=_ratio(tp, tp + fp, both_empty),
        image_id=image_id,
    )


@dataclass
class MetricReport:
    per_image: List[ImageMetrics]
    mean: Dict[str, float]
    std: Dict[str, float]
    threshold: float
    name: str = ""

    def summary(self) -> str:
        parts = [f"m{n.capitalize()}={self.mean[n]:.4f}±{self.std[n]:.4f}" for n in METRIC_NAMES]
        return f"{self.name or 'report'} ({len(self.per_image)} images, threshold {self.threshold}): " + ", ".join(parts)


def _sample_std(values: Sequence[float], mean: float) -> float:
    if len(values) < 2:
        return 0.0
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


def macro_aggregate(per_image: Sequence[ImageMetrics], threshold: float = 0.5, name: str = "") -> MetricReport:
    """Arithmetic mean and sample standard deviation per metric"""
    if not per_image:
        raise ValueError("macro_aggregate needs at least one image")
    mean, std = {}, {}
    for metric in METRIC_NAMES:
        values = sorted(getattr(m, metric) for m in per_image)
        mean[metric] = math.fsum(values) / len(values)
        std[metric] = _sample_std(values, mean[metric])
    return MetricReport(per_image=list(per_image), mean=mean, std=std, threshold=threshold, name=name)


@dataclass
class CurveData:
    fpr: np.ndarray
    tpr: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    auc: float
    average_precision: float
    name: str = ""


def curves(scores, labels, name: str = "") -> CurveData:
    """ROC and PR curves over every distinct score threshold.

    AUC is the trapezoid area under (FPR, TPR) from (0, 0) to (1, 1). Average
    precision is sum over thresholds of (R_n - R_{n-1}) * P_n.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1) > 0.5
    if scores.shape != labels.shape:
        raise ShapeError(f"curves needs one label per score, got {scores.size} scores and {labels.size} labels")
    positives = int(labels.sum())
    negatives = int(labels.size - positives)
    if positives == 0 or negatives == 0:
        raise CurveError(f"ROC undefined for {positives} positive and {negatives} negative labels")

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[cut].astype(np.float64)
    fp = (cut + 1) - tp

    tpr = np.r_[0.0, tp / positives]
    fpr = np.r_[0.0, fp / negatives]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))

    precision = tp / (tp + fp)
    recall = tp / positives
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))

    return CurveData(
        fpr=fpr,
        tpr=tpr,
        recall=np.r_[0.0, recall],
        precision=np.r_[1.0, precision],
        thresholds=s[cut],
        auc=auc,
        average_precision=ap,
        name=name,
    )


@dataclass
class PixelPool:
    """Collects pooled pixel scores/labels across an evaluation set"""
    scores: List[np.ndarray] = field(default_factory=list)
    labels: List[np.ndarray] = field(default_factory=list)

    def add(self, prob: np.ndarray, target: np.ndarray):
        self.scores.append(np.asarray(prob, dtype=np.float64).reshape(-1))
        self.labels.append(np.asarray(target).reshape(-1))

    def curves(self, name: str = "") -> Optional[CurveData]:
        if not self.scores:
            return None
        try:
            return curves(np.concatenate(self.scores), np.concatenate(self.labels), name=name)
        except CurveError as e:
            logger.warning(f"skipping curves for {name or 'evaluation set'}: {e}")
            return None
