"""ROC, EER, AUC, threshold metrics and average precision."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError, UndefinedMetricError


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray  # strictly decreasing, starts at +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    eer: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in self.points:
                writer.writerow([repr(t), repr(f), repr(p)])


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.shape != labels.shape:
        raise InvalidArgumentError("scores and labels differ in length")
    if scores.size == 0:
        raise InvalidArgumentError("empty input")
    return scores, labels


def roc_points(scores, labels):
    """``(thresholds, fpr, tpr)``; a sample is positive when ``score >= threshold``."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("ROC needs both positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    thresholds = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return thresholds, fpr, tpr


def eer_from_points(fpr, tpr) -> float:
    """First crossing of ``fpr = 1 - tpr``, linearly interpolated."""
    gap = fpr + tpr - 1.0
    k = int(np.argmax(gap >= 0.0))
    if gap[k] == 0.0 or k == 0:
        return float(fpr[k])
    t = -gap[k - 1] / (gap[k] - gap[k - 1])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def roc(scores, labels) -> RocCurve:
    thresholds, fpr, tpr = roc_points(scores, labels)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc, eer_from_points(fpr, tpr))


def eer(scores, labels) -> float:
    _, fpr, tpr = roc_points(scores, labels)
    return eer_from_points(fpr, tpr)


@dataclass(frozen=True)
class ThresholdMetrics:
    precision: float
    recall: float
    accuracy: float


def threshold_metrics(scores, labels, threshold: float = 0.5) -> ThresholdMetrics:
    """Precision, recall and accuracy with ``score > threshold`` counted positive."""
    scores, labels = _prepare(scores, labels)
    pred = scores > threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if tp + fn == 0 else 0.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return ThresholdMetrics(precision, recall, (tp + tn) / labels.size)


def average_precision(scores, labels, cutoff: int | None = None) -> float:
    """Mean precision at the rank of each positive, ranking by descending score.

    Equal scores keep input order. With ``cutoff`` only the top-K ranks
    count and the mean runs over positives found there (AP@K); if none are
    found the result is 0.
    """
    scores, labels = _prepare(scores, labels)
    if not labels.any():
        raise UndefinedMetricError("average precision needs at least one positive")
    if cutoff is not None and cutoff <= 0:
        raise InvalidArgumentError("cutoff must be positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    if cutoff is not None:
        hits = hits[:cutoff]
    if not hits.any():
        return 0.0
    ranks = np.nonzero(hits)[0] + 1
    precision_at_hit = np.arange(1, ranks.size + 1) / ranks
    return float(precision_at_hit.mean())
