"""EvalReport: per-fold and pooled scores for one model in one inference mode."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from windfault.evaluation.metrics import check_micro_identity, confusion_and_metrics
from windfault.evaluation.roc import roc_auc

SCORES = ("accuracy", "precision", "recall", "f_score", "macro_auc")


@dataclass
class FoldResult:
    """Raw predictions for one held-out fold (kept in memory, not serialized)."""

    fold: int
    test_index: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    group_ids: np.ndarray
    status: str = "ok"
    error: str | None = None


@dataclass
class EvalReport:
    model_id: str
    uq: bool
    folds: list
    aggregate: dict
    pooled: dict
    confusion_matrix: list
    per_class_auc: list
    macro_auc: float | None
    roc_curves: list
    run_level_accuracy: float | None
    uncertainty: dict | None = None
    config: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return self.aggregate.get("accuracy")

    @property
    def name(self):
        return f"{self.model_id}{'+uq' if self.uq else ''}"

    def to_dict(self, include_runtime=False):
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("runtime", {})
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _majority(pred):
    counts = np.bincount(pred)
    return int(counts.argmax())


def assemble_report(model_id, uq, results, n_classes=8, config=None, runtime=None,
                    uncertainty_fn=None) -> EvalReport:
    """Score each fold, pool all held-out predictions and aggregate.

    ``aggregate`` is the unweighted mean of per-fold scores over folds that
    completed; failed folds are listed with their error and excluded.
    """
    folds = []
    ok = [r for r in results if r.status == "ok"]
    for r in results:
        if r.status != "ok":
            folds.append({"fold": r.fold, "status": r.status, "error": r.error})
            continue
        pred = np.asarray(r.probs).argmax(axis=1)
        m = confusion_and_metrics(r.labels, pred, n_classes, average="micro")
        check_micro_identity(m)
        ra = roc_auc(r.labels, r.probs, n_classes)
        folds.append({
            "fold": int(r.fold), "status": "ok", "n": m["n"],
            "accuracy": m["accuracy"], "precision": m["precision"], "recall": m["recall"],
            "f_score": m["f_score"], "macro_auc": ra["macro_auc"],
            "confusion_matrix": m["confusion_matrix"],
        })
    good = [f for f in folds if f["status"] == "ok"]
    aggregate = {}
    for key in SCORES:
        vals = [f[key] for f in good if f.get(key) is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None
    aggregate["n_folds"] = len(good)
    aggregate["n_failed"] = len(folds) - len(good)

    if ok:
        labels = np.concatenate([r.labels for r in ok])
        probs = np.concatenate([r.probs for r in ok])
        groups = np.concatenate([r.group_ids for r in ok])
    else:
        labels = np.zeros(0, dtype=int)
        probs = np.zeros((0, n_classes))
        groups = np.zeros(0, dtype=object)
    pred = probs.argmax(axis=1) if len(probs) else np.zeros(0, dtype=int)
    pooled = confusion_and_metrics(labels, pred, n_classes, average="micro")
    check_micro_identity(pooled)
    cm = pooled.pop("confusion_matrix")
    ra = roc_auc(labels, probs, n_classes) if len(labels) else \
        {"per_class_auc": [None] * n_classes, "macro_auc": None, "curves": [None] * n_classes}

    run_acc = None
    if len(labels):
        hits = []
        for g in sorted(set(groups.tolist())):
            mask = groups == g
            hits.append(_majority(pred[mask]) == int(labels[mask][0]))
        run_acc = float(np.mean(hits))

    unc = uncertainty_fn(probs, labels) if (uq and uncertainty_fn and len(labels)) else None
    return EvalReport(
        model_id=model_id, uq=bool(uq), folds=folds, aggregate=aggregate, pooled=pooled,
        confusion_matrix=cm, per_class_auc=ra["per_class_auc"], macro_auc=ra["macro_auc"],
        roc_curves=ra["curves"], run_level_accuracy=run_acc, uncertainty=unc,
        config=config or {}, runtime=runtime or {})
