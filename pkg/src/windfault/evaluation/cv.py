"""Cross-validated training and scoring of the deep models."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import torch

from windfault.dataset import FoldPlan, WindowSet
from windfault.errors import ChecksumError, InvalidArgument, SpecMismatch
from windfault.evaluation.report import EvalReport, FoldResult, assemble_report
from windfault.models.architectures import ModelSpec, build_model, normalize_arch
from windfault.models.training import (
    Checkpoint,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train,
)
from windfault.uq import export_predictions, mc_predict, uncertainty_report

log = logging.getLogger(__name__)

MODES = ("plain", "uq")


def fold_seed(seed, fold):
    return int(seed) * 1000 + int(fold)


def _reusable(path: Path, spec: ModelSpec, meta: dict):
    if not path.exists():
        return None
    try:
        ckpt = load_checkpoint(path, expected_spec=spec)
    except (ChecksumError, SpecMismatch, OSError):
        return None
    keys = ("epochs", "batch_size", "seed", "fold", "dataset_hash", "learning_rate")
    if any(ckpt.metadata.get(k) != meta.get(k) for k in keys):
        return None
    return ckpt


def checkpoint_path(ckpt_dir, arch, fold) -> Path:
    return Path(ckpt_dir) / f"{normalize_arch(arch)}-fold{fold}.pt"


def train_fold(spec, ws, plan, fold, epochs, batch, seed, lr=1e-3, ckpt_dir=None, threads=1,
               extra_meta=None):
    """Train (or reuse a matching saved checkpoint for) one fold."""
    fseed = fold_seed(seed, fold)
    want = {"epochs": epochs, "batch_size": batch, "seed": fseed, "fold": fold,
            "dataset_hash": ws.config_hash, "learning_rate": lr}
    path = checkpoint_path(ckpt_dir, spec.architecture, fold) if ckpt_dir else None
    if path is not None:
        ckpt = _reusable(path, spec, want)
        if ckpt is not None:
            ws.fold_split(plan, fold)  # refresh the fold's normalization stats
            log.info("reusing %s", path)
            return ckpt
    model = build_model(spec, seed=fseed)
    ckpt = train(model, ws, plan, fold, epochs=epochs, batch=batch, seed=fseed, lr=lr,
                 threads=threads)
    ckpt.metadata.update(extra_meta or {})
    if path is not None:
        save_checkpoint(ckpt, path)
    return ckpt


def failed_fold(fold, n_classes, exc) -> FoldResult:
    return FoldResult(fold, np.zeros(0, int), np.zeros(0, int), np.zeros((0, n_classes)),
                      np.zeros(0, object), "failed", repr(exc))


def predict_fold(ckpt: Checkpoint, ws, plan, fold, modes=MODES, k=200, mc_seed=0, threads=1,
                 pred_dir=None) -> dict:
    """Score the held-out windows of ``fold``; returns ``{mode: FoldResult}``."""
    _, _, x_te, y_te, te = ws.fold_split(plan, fold)
    model = ckpt.model()
    torch.set_num_threads(threads)
    x = model.prepare(x_te)
    out = {}
    for mode in modes:
        if mode == "plain":
            probs = predict_proba(model, x)
        else:
            probs = mc_predict(model, x, k=k, seed=fold_seed(mc_seed, fold)).mean_probs
        out[mode] = FoldResult(fold, te, y_te, probs, ws.group_ids[te])
        if pred_dir is not None:
            export_predictions(Path(pred_dir) / f"{ckpt.spec.architecture}-{mode}-fold{fold}.csv",
                               te, ws.group_ids[te], y_te, probs, fold=fold)
    return out


def cross_validate(arch, ws: WindowSet, plan: FoldPlan, modes=MODES, epochs=50, batch=32,
                   seed=0, k=200, mc_seed=None, lr=1e-3, ckpt_dir=None, pred_dir=None,
                   folds=None, threads=1, spec=None) -> dict:
    """Train one model per fold and score it in each requested mode.

    Plain mode is a single deterministic pass (dropout off); UQ mode averages
    ``k`` Monte Carlo dropout passes. Both modes share the fold's trained
    weights. Returns ``{mode: EvalReport}``.
    """
    bad = set(modes) - set(MODES)
    if bad:
        raise InvalidArgument(f"unknown modes {sorted(bad)}")
    spec = spec or ModelSpec(normalize_arch(arch))
    mc_seed = seed if mc_seed is None else mc_seed
    folds = range(plan.k) if folds is None else folds
    results = {m: [] for m in modes}
    timings = {}
    for fold in folds:
        start = time.perf_counter()
        try:
            ckpt = train_fold(spec, ws, plan, fold, epochs, batch, seed, lr, ckpt_dir, threads)
            fold_results = predict_fold(ckpt, ws, plan, fold, modes, k, mc_seed, threads,
                                        pred_dir)
        except Exception as exc:  # a failed fold is reported, not fatal
            log.exception("fold %d of %s failed", fold, spec.architecture)
            fold_results = {m: failed_fold(fold, spec.n_classes, exc) for m in modes}
        for mode in modes:
            results[mode].append(fold_results[mode])
        timings[fold] = time.perf_counter() - start
        log.info("%s fold %d done in %.1fs", spec.architecture, fold, timings[fold])

    config = {"arch": spec.architecture, "spec_hash": spec.hash, "epochs": epochs,
              "batch": batch, "seed": seed, "mc_seed": mc_seed, "k": k, "lr": lr,
              "dataset_hash": ws.config_hash, "k_folds": plan.k}
    out = {}
    for mode in modes:
        cfg = dict(config)
        if mode == "plain":
            cfg.pop("k")
            cfg.pop("mc_seed")
        out[mode] = assemble_report(spec.architecture, mode == "uq", results[mode],
                                    spec.n_classes, cfg, {"fold_seconds": timings},
                                    uncertainty_fn=uncertainty_report)
    return out


def run_cv(arch, ws, plan, uq=False, seeds=0, **kwargs) -> EvalReport:
    mode = "uq" if uq else "plain"
    seed = seeds[0] if isinstance(seeds, (list, tuple)) else seeds
    return cross_validate(arch, ws, plan, modes=(mode,), seed=seed, **kwargs)[mode]


def load_fold_model(ckpt_dir, arch, fold) -> Checkpoint:
    return load_checkpoint(checkpoint_path(ckpt_dir, arch, fold))
