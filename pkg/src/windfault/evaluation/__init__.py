"""Cross-validated scoring, baselines, ROC/AUC, T-SNE and report artifacts."""

from windfault.evaluation.baselines import baseline_classifiers
from windfault.evaluation.cv import cross_validate, run_cv
from windfault.evaluation.metrics import check_micro_identity, confusion_and_metrics
from windfault.evaluation.report import EvalReport, FoldResult, assemble_report
from windfault.evaluation.roc import auc, auc_score, roc_auc, roc_curve

__all__ = [
    "EvalReport", "FoldResult", "assemble_report", "auc", "auc_score", "baseline_classifiers",
    "check_micro_identity", "confusion_and_metrics", "cross_validate", "roc_auc", "roc_curve",
    "run_cv",
]
