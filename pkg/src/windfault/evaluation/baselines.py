"""Decision-tree and random-forest baselines on flattened windows."""

from __future__ import annotations

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.tree import DecisionTreeClassifier

from windfault.evaluation.report import FoldResult, assemble_report

DT_PARAMS = {"max_depth": 50}
RF_PARAMS = {"n_estimators": 200, "max_depth": 50}


def _full_proba(clf, x, n_classes):
    """predict_proba widened to all classes (unseen classes get 0)."""
    proba = clf.predict_proba(x)
    out = np.zeros((len(x), n_classes))
    out[:, clf.classes_.astype(int)] = proba
    return out


def fit_predict(clf, x_train, y_train, x_test, n_classes=8):
    clf.fit(x_train.reshape(len(x_train), -1), y_train)
    return _full_proba(clf, x_test.reshape(len(x_test), -1), n_classes)


def baseline_classifiers(ws, plan, seed=0, n_classes=8, dt_params=None, rf_params=None,
                         n_jobs=1):
    """Evaluate DT and RF under ``plan``; windows are flattened to 625 features."""
    dt_params = {**DT_PARAMS, **(dt_params or {})}
    rf_params = {**RF_PARAMS, **(rf_params or {})}
    results = {"decision-tree": [], "random-forest": []}
    for fold in range(plan.k):
        x_tr, y_tr, x_te, y_te, te = ws.fold_split(plan, fold)
        groups = ws.group_ids[te]
        dt = DecisionTreeClassifier(random_state=seed, **dt_params)
        rf = RandomForestClassifier(random_state=seed, n_jobs=n_jobs, **rf_params)
        for name, clf in (("decision-tree", dt), ("random-forest", rf)):
            probs = fit_predict(clf, x_tr, y_tr, x_te, n_classes)
            results[name].append(FoldResult(fold, te, y_te, probs, groups))
    cfg = {"seed": seed, "dataset_hash": ws.config_hash, "k_folds": plan.k}
    return (
        assemble_report("decision-tree", False, results["decision-tree"], n_classes,
                        {**cfg, **dt_params}),
        assemble_report("random-forest", False, results["random-forest"], n_classes,
                        {**cfg, **rf_params}),
    )
