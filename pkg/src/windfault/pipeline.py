"""End-to-end run: simulate, build-dataset, train, predict, evaluate, visualize.

Each stage writes a ``stage.json`` marker holding its stage hash (the stage's
config block chained with the upstream stage hash) and the content hashes of
what it wrote. A stage whose marker matches is skipped on rerun.
"""

from __future__ import annotations

import json
import logging
import os
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from windfault.config import RunConfig, save_config
from windfault.dataset import build_corpus, load_windowset, make_folds, save_windowset
from windfault.errors import InvalidArgument, StageFailed
from windfault.evaluation.baselines import baseline_classifiers
from windfault.evaluation.cv import (
    MODES,
    checkpoint_path,
    failed_fold,
    predict_fold,
    train_fold,
)
from windfault.evaluation.report import FoldResult, assemble_report
from windfault.evaluation.reports import plot_embedding, render_reports
from windfault.evaluation.tsne import layer_features, tsne_embed
from windfault.hashing import config_hash, file_hash
from windfault.models.architectures import ModelSpec
from windfault.models.training import load_checkpoint
from windfault.turbsim.io import read_manifest, simulate_corpus
from windfault.uq import uncertainty_report

log = logging.getLogger(__name__)

STAGES = ("simulate", "build-dataset", "train", "predict", "evaluate", "visualize")
STAGE_DIRS = {"simulate": "traces", "build-dataset": "dataset", "train": "checkpoints",
              "predict": "predictions", "evaluate": "reports", "visualize": "figures"}
MARKER = "stage.json"
UNTRACKED = (MARKER, "ledger.jsonl")  # time-stamped logs are not content artifacts


def stage_hashes(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    sim = config_hash({"simulator": d["simulator"]})
    data = config_hash({"dataset": d["dataset"], "up": sim})
    train = config_hash({"model": d["model"], "up": data})
    pred = config_hash({"uq": d["uq"], "up": train})
    ev = config_hash({"baselines": d["baselines"], "up": pred})
    vis = config_hash({"visualize": d["visualize"], "up": train})
    return dict(zip(STAGES, (sim, data, train, pred, ev, vis)))


class Progress:
    """Machine-readable progress: one JSON line per stage event."""

    def __init__(self, path):
        self.path = Path(path)

    def emit(self, stage, event, **info):
        rec = {"time": round(time.time(), 3), "stage": stage, "event": event, **info}
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        log.info("%s %s %s", stage, event, info or "")


@contextmanager
def run_lock(run_dir: Path):
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        try:
            pid = int(lock.read_text().strip() or 0)
        except (OSError, ValueError):
            pid = 0
        if pid and _alive(pid):
            raise InvalidArgument(f"{run_dir} is locked by running process {pid}") from None
        lock.unlink(missing_ok=True)
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _alive(pid):
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _artifacts(stage_dir: Path) -> dict:
    return {str(p.relative_to(stage_dir)): file_hash(p)
            for p in sorted(stage_dir.rglob("*")) if p.is_file() and p.name not in UNTRACKED}


def _marker_ok(stage_dir: Path, stage_hash: str) -> bool:
    path = stage_dir / MARKER
    if not path.exists():
        return False
    marker = json.loads(path.read_text())
    if marker.get("stage_hash") != stage_hash:
        return False
    return all((stage_dir / rel).exists() for rel in marker.get("artifacts", {}))


def _write_marker(stage_dir: Path, stage, stage_hash, cfg_hash, extra=None):
    marker = {"stage": stage, "stage_hash": stage_hash, "config_hash": cfg_hash,
              "artifacts": _artifacts(stage_dir), **(extra or {})}
    (stage_dir / MARKER).write_text(json.dumps(marker, indent=1, sort_keys=True) + "\n")
    return marker


class Run:
    """A run directory bound to one config."""

    def __init__(self, cfg: RunConfig, run_dir=None):
        self.cfg = cfg
        self.dir = Path(run_dir or cfg.output_root)
        self.hash = cfg.hash
        self.stage_hash = stage_hashes(cfg)
        self.progress = Progress(self.dir / "progress.jsonl")
        self._ws = None

    def path(self, stage):
        return self.dir / STAGE_DIRS[stage]

    def prepare(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        cfg_file = self.dir / "config.json"
        if cfg_file.exists():
            old = json.loads(cfg_file.read_text()).get("config_hash")
            if old != self.hash:
                raise InvalidArgument(
                    f"{self.dir} holds artifacts of config {old}; refusing to mix with "
                    f"{self.hash}. Use a fresh output directory.")
        else:
            save_config(self.cfg, cfg_file)
            doc = json.loads(cfg_file.read_text())
            doc["config_hash"] = self.hash
            cfg_file.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # stages -------------------------------------------------------------

    def simulate(self, out: Path):
        s = self.cfg.simulator
        simulate_corpus(out, s.runs_per_class(), s.duration, s.seed, s.mean_speed,
                        s.turbulence_intensity, extra={"config_hash": self.hash})

    def windowset(self):
        if self._ws is None:
            self._ws = load_windowset(self.path("build-dataset"))
        return self._ws

    def build_dataset(self, out: Path):
        d = self.cfg.dataset
        ws = build_corpus(read_manifest(self.path("simulate")), d.window, d.stride)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            plan = make_folds(ws, d.folds, d.seed)
        for w in caught:
            log.warning("%s", w.message)
        save_windowset(ws, out, plan, extra={"config_hash": self.hash})
        self._ws = None

    def train(self, out: Path):
        ws, plan, _ = self.windowset()
        m = self.cfg.model
        failures = {}
        for arch in m.archs:
            spec = ModelSpec(arch)
            for fold in range(plan.k):
                try:
                    train_fold(spec, ws, plan, fold, m.epochs, m.batch, m.seed, m.lr, out,
                               m.threads, extra_meta={"config_hash": self.hash})
                except Exception as exc:  # annotated, scored as a failed fold later
                    log.exception("training %s fold %d failed", arch, fold)
                    failures[f"{arch}:{fold}"] = repr(exc)
                self.progress.emit("train", "fold", arch=arch, fold=fold)
        return {"failures": failures}

    def predict(self, out: Path):
        ws, plan, _ = self.windowset()
        u, m = self.cfg.uq, self.cfg.model
        for arch in m.archs:
            spec = ModelSpec(arch)
            per_mode = {mode: [] for mode in MODES}
            for fold in range(plan.k):
                try:
                    ckpt = load_checkpoint(checkpoint_path(self.path("train"), arch, fold), spec)
                    res = predict_fold(ckpt, ws, plan, fold, MODES, u.k, u.seed, m.threads,
                                       pred_dir=out / "csv")
                except Exception as exc:
                    log.exception("prediction %s fold %d failed", arch, fold)
                    res = {mode: failed_fold(fold, spec.n_classes, exc) for mode in MODES}
                for mode in MODES:
                    per_mode[mode].append(res[mode])
            for mode, results in per_mode.items():
                save_fold_results(out / f"{arch}-{mode}.npz", results, self.hash)

    def evaluate(self, out: Path):
        ws, plan, _ = self.windowset()
        m, u, b = self.cfg.model, self.cfg.uq, self.cfg.baselines
        reports = []
        for arch in m.archs:
            spec = ModelSpec(arch)
            seconds = {}
            for fold in range(plan.k):
                p = checkpoint_path(self.path("train"), arch, fold)
                if p.exists():
                    seconds[fold] = load_checkpoint(p).metadata.get("train_seconds")
            for mode in MODES:
                results = load_fold_results(self.path("predict") / f"{arch}-{mode}.npz")
                cfg = {"arch": arch, "spec_hash": spec.hash, "epochs": m.epochs,
                       "batch": m.batch, "seed": m.seed, "lr": m.lr,
                       "dataset_hash": ws.config_hash, "k_folds": plan.k,
                       "config_hash": self.hash}
                if mode == "uq":
                    cfg.update({"k": u.k, "mc_seed": u.seed})
                reports.append(assemble_report(arch, mode == "uq", results, spec.n_classes, cfg,
                                               {"train_seconds": seconds},
                                               uncertainty_fn=uncertainty_report))
        if b.enabled:
            start = time.perf_counter()
            dt, rf = baseline_classifiers(
                ws, plan, seed=b.seed, dt_params={"max_depth": b.dt_max_depth},
                rf_params={"n_estimators": b.rf_estimators, "max_depth": b.rf_max_depth})
            for r in (dt, rf):
                r.config["config_hash"] = self.hash
                r.runtime = {"seconds": time.perf_counter() - start}
            reports += [dt, rf]
        render_reports(reports, out, config_hash=self.hash, dataset_hash=ws.config_hash,
                       seeds={"model": m.seed, "uq": u.seed, "baselines": b.seed})
        return reports

    def visualize(self, out: Path):
        ws, plan, _ = self.windowset()
        v = self.cfg.visualize
        archs = v.archs or self.cfg.model.archs
        _, _, x_te, y_te, _ = ws.fold_split(plan, v.fold)
        for arch in archs:
            ckpt = load_checkpoint(checkpoint_path(self.path("train"), arch, v.fold))
            model = ckpt.model()
            for layer in v.layers:
                feats = layer_features(model, x_te, layer)
                perplexity = min(v.perplexity, (len(feats) - 1) / 3.0)
                emb = tsne_embed(feats, perplexity=perplexity, seed=v.seed)
                stem = out / f"tsne-{arch}-{layer}"
                np.savez(stem.with_suffix(".npz"), embedding=emb, labels=y_te,
                         config_hash=self.hash)
                plot_embedding(emb, y_te, stem.with_suffix(".png"),
                               title=f"{arch} {layer} (fold {v.fold})")

    # orchestration ------------------------------------------------------

    def run_stage(self, stage, force=False):
        out = self.path(stage)
        h = self.stage_hash[stage]
        if not force and _marker_ok(out, h):
            self.progress.emit(stage, "skip", stage_hash=h)
            return "skipped"
        out.mkdir(parents=True, exist_ok=True)
        (out / MARKER).unlink(missing_ok=True)
        self.progress.emit(stage, "start", stage_hash=h)
        start = time.perf_counter()
        try:
            extra = getattr(self, stage.replace("-", "_"))(out)
        except Exception as exc:
            self.progress.emit(stage, "fail", error=repr(exc))
            raise StageFailed(stage, exc) from exc
        _write_marker(out, stage, h, self.hash, extra if isinstance(extra, dict) else None)
        self.progress.emit(stage, "done", seconds=round(time.perf_counter() - start, 3))
        return "ran"

    def write_manifest(self):
        stages = {}
        for stage in STAGES:
            marker = self.path(stage) / MARKER
            if marker.exists():
                m = json.loads(marker.read_text())
                stages[stage] = {"dir": STAGE_DIRS[stage], "stage_hash": m["stage_hash"],
                                 "artifacts": m["artifacts"]}
        doc = {"config_hash": self.hash, "profile": self.cfg.profile, "stages": stages}
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


def full_run(cfg: RunConfig, run_dir=None, stages=STAGES) -> Path:
    """Run every stage in order; returns the run directory."""
    cfg.validate()
    run = Run(cfg, run_dir)
    run.dir.mkdir(parents=True, exist_ok=True)
    with run_lock(run.dir):
        run.prepare()
        for stage in stages:
            run.run_stage(stage)
        run.write_manifest()
    return run.dir


def save_fold_results(path: Path, results, cfg_hash):
    folds = [r.fold for r in results]
    meta = [{"fold": r.fold, "status": r.status, "error": r.error} for r in results]
    ok = [r for r in results if r.status == "ok"]
    cat = (lambda a, dt: np.concatenate(a).astype(dt) if a else np.zeros(0, dt))
    np.savez(path,
             fold=cat([np.full(len(r.labels), r.fold) for r in ok], int),
             test_index=cat([r.test_index for r in ok], int),
             labels=cat([r.labels for r in ok], int),
             probs=np.concatenate([r.probs for r in ok]) if ok else np.zeros((0, 8)),
             group_ids=cat([np.asarray(r.group_ids, dtype=str) for r in ok], str),
             folds=np.asarray(folds),
             meta=json.dumps(meta), config_hash=cfg_hash)


def load_fold_results(path: Path):
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(str(data["meta"]))
    out = []
    for m in meta:
        if m["status"] != "ok":
            out.append(FoldResult(m["fold"], np.zeros(0, int), np.zeros(0, int),
                                  np.zeros((0, data["probs"].shape[1])), np.zeros(0, object),
                                  m["status"], m["error"]))
            continue
        sel = data["fold"] == m["fold"]
        out.append(FoldResult(m["fold"], data["test_index"][sel], data["labels"][sel],
                              data["probs"][sel], data["group_ids"][sel].astype(object)))
    return out
