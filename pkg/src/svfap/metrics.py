"""Evaluation metrics: recall-based classification scores, correlation
coefficients for dimensional regression, and the 1-minus-MAE accuracy used for
bounded trait scores.

Correlation moments are population moments (divide by N). For cross-validation
the intended protocol is to pool predictions and labels from all folds and then
call these once on the pooled arrays.
"""

from __future__ import annotations

import warnings

import numpy as np


def _as_labels(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(
            f"predictions and labels must be equal-length 1-D arrays, got "
            f"{preds.shape} and {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty input")
    return preds.astype(np.int64), labels.astype(np.int64)


def _check_range(values: np.ndarray, k: int, name: str) -> None:
    if values.size and (values.min() < 0 or values.max() >= k):
        raise ValueError(f"{name} contain entries outside [0, {k})")


def war(preds, labels) -> float:
    """Weighted average recall, i.e. plain accuracy."""
    preds, labels = _as_labels(preds, labels)
    return float(np.mean(preds == labels))


def uar(preds, labels, k: int) -> float:
    """Unweighted average recall: the mean of per-class recalls.

    Classes with no ground-truth samples are excluded from the mean and
    reported through a warning.
    """
    preds, labels = _as_labels(preds, labels)
    _check_range(preds, k, "predictions")
    _check_range(labels, k, "labels")
    recalls = []
    absent = []
    for cls in range(k):
        support = labels == cls
        if not support.any():
            absent.append(cls)
            continue
        recalls.append(np.mean(preds[support] == cls))
    if absent:
        warnings.warn(f"classes without samples excluded from the recall "
                      f"mean: {absent}", stacklevel=2)
    return float(np.mean(recalls))


def weighted_f1(preds, labels, k: int) -> float:
    """Support-weighted mean of per-class F1 scores.

    A class with neither predicted nor true positives has F1 = 0; classes with
    zero support carry zero weight.
    """
    preds, labels = _as_labels(preds, labels)
    _check_range(preds, k, "predictions")
    _check_range(labels, k, "labels")
    total = 0.0
    for cls in range(k):
        support = int(np.sum(labels == cls))
        if support == 0:
            continue
        tp = int(np.sum((preds == cls) & (labels == cls)))
        fp = int(np.sum((preds == cls) & (labels != cls)))
        fn = support - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        total += support * f1
    return float(total / preds.size)


def _as_scores(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ValueError(
            f"score sequences must be equal-length 1-D arrays, got "
            f"{pred.shape} and {target.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, target


def pcc(pred, target) -> float:
    """Pearson correlation with population moments."""
    pred, target = _as_scores(pred, target)
    pd = pred - pred.mean()
    td = target - target.mean()
    var_p = np.mean(pd * pd)
    var_t = np.mean(td * td)
    if var_p == 0.0 or var_t == 0.0:
        raise ValueError("correlation undefined for a zero-variance sequence")
    return float(np.mean(pd * td) / np.sqrt(var_p * var_t))


def ccc(pred, target) -> float:
    """Concordance correlation: 2 cov / (var_pred + var_target + mean_gap^2)."""
    pred, target = _as_scores(pred, target)
    pd = pred - pred.mean()
    td = target - target.mean()
    cov = np.mean(pd * td)
    denom = np.mean(pd * pd) + np.mean(td * td) + (pred.mean() - target.mean()) ** 2
    if denom == 0.0:
        raise ValueError("concordance undefined: both sequences constant "
                         "with equal means")
    return float(2.0 * cov / denom)


def acc_personality(pred, target) -> float:
    """1 minus mean absolute error, for trait scores in [0, 1]."""
    pred, target = _as_scores(pred, target)
    return float(1.0 - np.mean(np.abs(pred - target)))
