"""Accuracy, uncertainty-quantile accuracy and misclassification AUC-ROC."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

DEFAULT_QUANTILES = (0.25, 0.5, 0.75, 1.0)


class DegenerateMetric(ValueError):
    """The metric is undefined for this input (e.g. AUC with a single class)."""


def predicted_labels(predictions: np.ndarray) -> np.ndarray:
    """Argmax over classes; ties go to the lowest class index. 1-D input passes through."""
    predictions = np.asarray(predictions)
    if predictions.ndim == 1:
        return predictions.astype(np.int64)
    return np.argmax(predictions, axis=1)


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Fraction correct. ``predictions`` is (N,) labels or (N, K) scores."""
    pred = predicted_labels(predictions)
    labels = np.asarray(labels)
    if len(pred) != len(labels):
        raise ValueError(f"{len(pred)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(pred == labels))


def _check_pair(scores, correct) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if scores.shape != correct.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and flags {correct.shape} must be equal-length vectors")
    if len(scores) == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(scores)):
        raise ValueError("uncertainty scores must be finite")
    return scores, correct


def quantile_prefix(scores: np.ndarray, q: float) -> np.ndarray:
    """Indices of the ceil(q n) least uncertain samples (stable on ties)."""
    if not 0 < q <= 1:
        raise ValueError(f"quantile must be in (0, 1], got {q}")
    order = np.argsort(scores, kind="stable")
    return order[:math.ceil(q * len(scores) - 1e-12)]


def _prefix_accuracy(scores: np.ndarray, correct: np.ndarray, k: int) -> float:
    """Expected accuracy of the k least uncertain samples under random tie-breaking.

    Samples tied with the k-th score enter pro rata with their block accuracy, so
    the result does not depend on input order. Integer arithmetic until the single
    final division keeps the 100% and constant-score cases exact.
    """
    cut = np.sort(scores)[k - 1]
    below, tied = scores < cut, scores == cut
    n_below, n_tied = int(below.sum()), int(tied.sum())
    c_below, c_tied = int(correct[below].sum()), int(correct[tied].sum())
    need = k - n_below
    if need == n_tied:
        return (c_below + c_tied) / k
    return (c_below * n_tied + need * c_tied) / (n_tied * k)


def quantile_accuracy(scores, correct, quantiles=DEFAULT_QUANTILES) -> dict[float, float]:
    """Accuracy over each nested low-uncertainty prefix of size ceil(q n)."""
    scores, correct = _check_pair(scores, correct)
    return {float(q): _prefix_accuracy(scores, correct, len(quantile_prefix(scores, q))) for q in quantiles}


def auc_roc(scores, correct) -> float:
    """P(s_incorrect > s_correct) + P(tie) / 2 via midranks."""
    scores, correct = _check_pair(scores, correct)
    wrong = ~correct
    n_pos, n_neg = int(wrong.sum()), int(correct.sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetric("AUC-ROC needs both correct and incorrect samples")
    ranks = rankdata(scores, method="average")
    u = ranks[wrong].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
