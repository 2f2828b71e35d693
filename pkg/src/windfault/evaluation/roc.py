"""One-vs-rest ROC curves by threshold sweep and trapezoidal AUC."""

from __future__ import annotations

import numpy as np

from windfault.errors import InvalidArgument


def _sweep(scores, positive):
    """Cumulative integer (fp, tp) at each distinct threshold, high to low."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    p = positive[order]
    # keep the last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(p)[last]]
    fp = np.r_[0, np.cumsum(~p)[last]]
    return fp, tp, np.r_[np.inf, s[last]], n_pos, n_neg


def roc_curve(scores, positive):
    """(fpr, tpr, thresholds) sweeping every unique score from high to low.

    Tied scores cross the threshold together, so a tie between a positive and
    a negative produces a diagonal segment worth half a pair under the
    trapezoid rule. Returns ``None`` when either class is missing.
    """
    sweep = _sweep(scores, positive)
    if sweep is None:
        return None
    fp, tp, thresholds, n_pos, n_neg = sweep
    return fp / n_neg, tp / n_pos, thresholds


def auc(fpr, tpr):
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_score(scores, positive):
    """Trapezoidal AUC evaluated on integer counts, divided once at the end.

    Equals the pair-counting value P(s+ > s-) + P(tie)/2 to the last bit.
    """
    sweep = _sweep(scores, positive)
    if sweep is None:
        return None
    fp, tp, _, n_pos, n_neg = sweep
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def roc_auc(true, probs, n_classes=None) -> dict:
    """Per-class one-vs-rest AUC, macro AUC and curve points.

    A class with no positives (or no negatives) in ``true`` gets AUC ``None``
    and is left out of the macro average.
    """
    true = np.asarray(true, dtype=int)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) != len(true):
        raise InvalidArgument("probabilities must be N x C and aligned with labels")
    n_classes = n_classes or probs.shape[1]
    per_class, curves = [], []
    for c in range(n_classes):
        curve = roc_curve(probs[:, c], true == c)
        if curve is None:
            per_class.append(None)
            curves.append(None)
            continue
        fpr, tpr, _ = curve
        per_class.append(auc_score(probs[:, c], true == c))
        curves.append({"fpr": fpr.tolist(), "tpr": tpr.tolist()})
    defined = [a for a in per_class if a is not None]
    return {
        "per_class_auc": per_class,
        "macro_auc": float(np.mean(defined)) if defined else None,
        "curves": curves,
    }
