"""ROC/AUC, accuracy and confusion counts for Good-vs-Bad scoring.

Scores are probabilities of the Good class; labels are 1 for Good, 0 for Bad.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, RangeError, SingleClass


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise RangeError(f"score {self.score} outside [0, 1]")


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _split(scores, labels=None):
    if labels is None:
        samples = list(scores)
        scores = [s.score for s in samples]
        labels = [s.label for s in samples]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    return scores, labels


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    n = x.size
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels=None) -> float:
    """Mann-Whitney AUC: P(score_good > score_bad) + 0.5 * P(tie).

    Accepts either parallel ``(scores, labels)`` arrays or a single iterable
    of ScoredSample.
    """
    scores, labels = _split(scores, labels)
    n_good = int(labels.sum())
    n_bad = labels.size - n_good
    if n_good == 0 or n_bad == 0:
        raise SingleClass("AUC needs at least one Good and one Bad sample")
    ranks = _midranks(scores)
    u = ranks[labels].sum() - n_good * (n_good + 1) / 2.0
    return float(u / (n_good * n_bad))


def roc_curve(scores, labels=None) -> RocCurve:
    """ROC with one vertex per distinct score; tied scores give a diagonal step."""
    scores, labels = _split(scores, labels)
    n_good = int(labels.sum())
    n_bad = labels.size - n_good
    if n_good == 0 or n_bad == 0:
        raise SingleClass("ROC needs at least one Good and one Bad sample")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tpr = np.r_[0.0, tp / n_good]
    fpr = np.r_[0.0, fp / n_bad]
    thresholds = np.r_[np.inf, s[ends]]
    area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=area)


def accuracy(scores, labels=None, threshold: float = 0.5) -> float:
    scores, labels = _split(scores, labels)
    if scores.size == 0:
        raise EmptyInput("accuracy of an empty sample set")
    if not 0.0 <= threshold <= 1.0:
        raise RangeError(f"threshold {threshold} outside [0, 1]")
    return float(np.mean((scores >= threshold) == labels))


def confusion_matrix(scores, labels=None, threshold: float = 0.5) -> dict[str, int]:
    scores, labels = _split(scores, labels)
    pred = scores >= threshold
    return {
        "tp": int(np.sum(pred & labels)),
        "fp": int(np.sum(pred & ~labels)),
        "tn": int(np.sum(~pred & ~labels)),
        "fn": int(np.sum(~pred & labels)),
    }


def write_roc_csv(curve: RocCurve, path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
