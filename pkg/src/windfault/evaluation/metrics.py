"""Confusion matrices and the count-based classification metrics."""

from __future__ import annotations

import numpy as np

from windfault.errors import InvalidArgument


def confusion_matrix(true, pred, n_classes=8):
    """Rows are true classes, columns predicted."""
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if true.shape != pred.shape:
        raise InvalidArgument(f"label vectors differ in length: {true.shape} vs {pred.shape}")
    for name, v in (("true", true), ("predicted", pred)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise InvalidArgument(f"{name} label outside 0..{n_classes - 1}")
    return np.bincount(true * n_classes + pred, minlength=n_classes**2).reshape(n_classes,
                                                                                n_classes)


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


def count_metrics(tp, fp, fn, tn):
    return {
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
        "f_score": _ratio(2 * tp, 2 * tp + fp + fn),
    }


def confusion_and_metrics(true, pred, n_classes=8, average=None) -> dict:
    """Confusion matrix plus accuracy, precision, recall and F-score.

    ``average="binary"`` (the default for two classes) scores class 1 as the
    positive class. ``"micro"`` (default otherwise) pools the one-vs-rest TP,
    FP and FN over classes; accuracy is then trace(CM)/sum(CM), which for
    single-label data equals micro precision, recall and F-score. Per-class,
    macro and support-weighted precision/recall are reported alongside.
    """
    cm = confusion_matrix(true, pred, n_classes)
    average = average or ("binary" if n_classes == 2 else "micro")
    total = int(cm.sum())
    diag = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    per_tp, per_fp, per_fn = diag, col - diag, row - diag
    per_tn = total - per_tp - per_fp - per_fn

    if average == "binary":
        tp, fp, fn, tn = (int(v[1]) for v in (per_tp, per_fp, per_fn, per_tn))
        out = count_metrics(tp, fp, fn, tn)
    elif average == "micro":
        tp, fp, fn, tn = (int(v.sum()) for v in (per_tp, per_fp, per_fn, per_tn))
        out = count_metrics(tp, fp, fn, tn)
        out["accuracy"] = _ratio(diag.sum(), total)
    else:
        raise InvalidArgument(f"unknown average {average!r}")

    prec = np.array([_ratio(per_tp[c], col[c]) for c in range(n_classes)])
    rec = np.array([_ratio(per_tp[c], row[c]) for c in range(n_classes)])
    f1 = np.array([_ratio(2 * per_tp[c], 2 * per_tp[c] + per_fp[c] + per_fn[c])
                   for c in range(n_classes)])
    present = row > 0
    weights = row / total if total else np.zeros(n_classes)
    out.update({
        "average": average,
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "n": total,
        "confusion_matrix": cm.tolist(),
        "per_class_precision": prec.tolist(),
        "per_class_recall": rec.tolist(),
        "per_class_f_score": f1.tolist(),
        "macro_precision": float(prec[present].mean()) if present.any() else 0.0,
        "macro_recall": float(rec[present].mean()) if present.any() else 0.0,
        "weighted_precision": float((prec * weights).sum()),
        "weighted_recall": float((rec * weights).sum()),
    })
    return out


def check_micro_identity(metrics: dict, tol=1e-12) -> None:
    """Raise if micro precision, recall or F-score drift from accuracy."""
    if metrics.get("average") != "micro" or not metrics.get("n"):
        return
    acc = metrics["accuracy"]
    for key in ("precision", "recall", "f_score"):
        if abs(metrics[key] - acc) > tol:
            raise AssertionError(f"micro {key} {metrics[key]} != accuracy {acc}")
