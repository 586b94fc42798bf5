"""Accuracy, macro-F1 over kappa+1 classes and augmented-class detection AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


class UndefinedMetric(ValueError):
    """Raised when a metric has no value for the given inputs (e.g. AUC without positives)."""


def _pair(preds, truths):
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {truths.size} truths")
    if preds.size == 0:
        raise ValueError("empty input")
    return preds, truths


def accuracy(preds, truths) -> float:
    preds, truths = _pair(preds, truths)
    return float(np.mean(preds == truths))


def confusion_matrix(preds, truths, n_classes) -> np.ndarray:
    """Rows are true classes, columns predicted classes (labels 1..n_classes)."""
    preds, truths = _pair(preds, truths)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths - 1, preds - 1), 1)
    return cm


def precision_recall_f1(preds, truths, n_classes):
    """Per-class precision, recall and F1; zero denominators give 0."""
    cm = confusion_matrix(preds, truths, n_classes)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros(n_classes), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros(n_classes), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    return precision, recall, f1


def macro_f1(preds, truths, kappa) -> float:
    """Mean F1 over all kappa+1 classes, absent classes included as 0."""
    _, _, f1 = precision_recall_f1(preds, truths, kappa + 1)
    return float(f1.mean())


def detection_auc(scores, truths, kappa, strict=False) -> float:
    """AUC of the augmented score for separating class kappa+1 from known classes.

    Tied pairs count 1/2 unless ``strict``, in which case they count 0.
    Raises :class:`UndefinedMetric` without both positives and negatives.
    """
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=np.int64)
    if scores.shape != truths.shape:
        raise ValueError("length mismatch")
    pos = scores[truths == kappa + 1]
    neg = scores[truths != kappa + 1]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetric("detection AUC needs at least one augmented and one known instance")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    at_or_below = np.searchsorted(neg_sorted, pos, side="right")
    ties = at_or_below - below
    wins = below.sum() + (0 if strict else 0.5 * ties.sum())
    return float(wins / (pos.size * neg.size))


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    detection_auc: float | None
    precision: list
    recall: list
    f1: list
    confusion: list
    n: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate(preds, truths, aug_scores, kappa, strict_auc=False) -> EvalReport:
    preds, truths = _pair(preds, truths)
    p, r, f1 = precision_recall_f1(preds, truths, kappa + 1)
    try:
        auc = detection_auc(aug_scores, truths, kappa, strict=strict_auc)
    except UndefinedMetric:
        auc = None
    return EvalReport(
        accuracy=accuracy(preds, truths),
        macro_f1=float(f1.mean()),
        detection_auc=auc,
        precision=p.tolist(),
        recall=r.tolist(),
        f1=f1.tolist(),
        confusion=confusion_matrix(preds, truths, kappa + 1).tolist(),
        n=int(preds.size),
    )
