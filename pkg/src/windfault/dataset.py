"""Sliding windows, per-fold normalization and run-level cross-validation folds."""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from windfault.errors import InvalidArgument
from windfault.hashing import config_hash
from windfault.turbsim.io import load_trace, read_manifest
from windfault.turbsim.params import CHANNELS, FaultKind, SensorTrace

log = logging.getLogger(__name__)

WINDOW = 125
CHUNK = 25
N_CLASSES = len(FaultKind)
LABEL_MAP = {int(k): k.name for k in FaultKind}


def window_count(n_samples, window_length, stride):
    if n_samples < window_length:
        return 0
    return (n_samples - window_length) // stride + 1


def slide_windows(trace, window_length=WINDOW, stride=WINDOW, label=None, group_id=None):
    """Cut a trace into contiguous windows.

    ``trace`` may be a SensorTrace (label and run id taken from it) or a bare
    T x C array. Returns ``(windows, labels, group_ids)`` with windows shaped
    N x window_length x C; a trace shorter than one window yields N = 0.
    """
    if window_length < 1 or stride < 1:
        raise InvalidArgument("window_length and stride must be >= 1")
    if isinstance(trace, SensorTrace):
        values = trace.values
        label = trace.label if label is None else label
        group_id = trace.run_id if group_id is None else group_id
    else:
        values = np.asarray(trace)
    t, c = values.shape
    n = window_count(t, window_length, stride)
    if n == 0:
        warnings.warn(f"trace {group_id!r} has {t} samples, shorter than window "
                      f"{window_length}; no windows produced", stacklevel=2)
        return np.empty((0, window_length, c)), np.empty(0, dtype=int), np.empty(0, dtype=object)
    idx = np.arange(n)[:, None] * stride + np.arange(window_length)[None, :]
    windows = values[idx]
    labels = np.full(n, -1 if label is None else int(label), dtype=int)
    groups = np.array([group_id] * n, dtype=object)
    return windows, labels, groups


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_normalizer(train_windows) -> NormStats:
    """Per-channel mean/std over all samples of all training windows.

    A channel with zero spread keeps std = 1 so it passes through unscaled.
    """
    x = np.asarray(train_windows, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("cannot fit a normalizer on an empty set")
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return NormStats(mean, std)


def apply_normalizer(stats: NormStats, windows):
    return (np.asarray(windows, dtype=np.float64) - stats.mean) / stats.std


def reshape_for_convlstm(window):
    """125 x 5 window -> 5 x 1 x 25 x 5 (time-chunk, row, column, sensor).

    Accepts a leading batch axis as well.
    """
    w = np.asarray(window)
    if w.shape[-2:] != (WINDOW, len(CHANNELS)) or w.ndim not in (2, 3):
        raise InvalidArgument(f"expected a {WINDOW}x{len(CHANNELS)} window, got {w.shape}")
    lead = w.shape[:-2]
    return w.reshape(*lead, WINDOW // CHUNK, 1, CHUNK, w.shape[-1])


def unreshape_from_convlstm(seq):
    s = np.asarray(seq)
    if s.shape[-4:] != (WINDOW // CHUNK, 1, CHUNK, len(CHANNELS)):
        raise InvalidArgument(f"expected ...x5x1x25x5, got {s.shape}")
    return s.reshape(*s.shape[:-4], WINDOW, s.shape[-1])


@dataclass
class FoldPlan:
    k: int
    assignments: dict  # run_id -> fold index
    seed: int = 0
    stratified: bool = True

    def test_runs(self, fold):
        return sorted(r for r, f in self.assignments.items() if f == fold)

    def train_runs(self, fold):
        return sorted(r for r, f in self.assignments.items() if f != fold)

    def to_dict(self):
        return {"k": self.k, "seed": self.seed, "stratified": self.stratified,
                "assignments": dict(sorted(self.assignments.items()))}

    @classmethod
    def from_dict(cls, d):
        return cls(d["k"], dict(d["assignments"]), d.get("seed", 0), d.get("stratified", True))


@dataclass
class WindowSet:
    """Raw (un-normalized) windows with labels and source-run ids.

    Normalization is fitted per fold on that fold's training windows; see
    :meth:`fold_split`.
    """

    windows: np.ndarray
    labels: np.ndarray
    group_ids: np.ndarray
    window_length: int = WINDOW
    stride: int = WINDOW
    run_labels: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    normalization_stats: dict = field(default_factory=dict)  # fold -> NormStats

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.group_ids = np.asarray(self.group_ids, dtype=object)
        if not (len(self.windows) == len(self.labels) == len(self.group_ids)):
            raise InvalidArgument("windows, labels and group_ids must align")
        if not self.run_labels:
            self.run_labels = {}
            for g, y in zip(self.group_ids, self.labels):
                if self.run_labels.setdefault(g, int(y)) != int(y):
                    raise InvalidArgument(f"run {g!r} carries more than one label")

    def __len__(self):
        return len(self.labels)

    @property
    def runs(self):
        return sorted(self.run_labels)

    def class_histogram(self):
        counts = Counter(int(y) for y in self.labels)
        return {c: counts.get(c, 0) for c in range(N_CLASSES)}

    @property
    def config_hash(self):
        return config_hash(self.config)

    def indices_for(self, runs):
        runs = set(runs)
        return np.flatnonzero([g in runs for g in self.group_ids])

    def fold_split(self, plan: FoldPlan, fold: int):
        """Normalized (x_train, y_train, x_test, y_test, test_index) for ``fold``."""
        tr = self.indices_for(plan.train_runs(fold))
        te = self.indices_for(plan.test_runs(fold))
        if len(tr) == 0:
            raise InvalidArgument(f"fold {fold} has an empty training split")
        stats = fit_normalizer(self.windows[tr])
        self.normalization_stats[fold] = stats
        return (apply_normalizer(stats, self.windows[tr]), self.labels[tr],
                apply_normalizer(stats, self.windows[te]), self.labels[te], te)


def build_corpus(manifest, window_length=WINDOW, stride=WINDOW, root=None) -> WindowSet:
    """Window every run listed in ``manifest`` (a dict or a path)."""
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    runs = manifest.get("runs") or []
    if not runs:
        raise InvalidArgument("manifest lists no runs")
    root = Path(root or manifest.get("_root", "."))
    xs, ys, gs = [], [], []
    for entry in runs:
        path = root / entry["file"]
        if not path.exists():
            raise FileNotFoundError(f"trace for run {entry['run_id']!r} missing: {path}")
        trace = load_trace(path)
        w, y, g = slide_windows(trace, window_length, stride)
        xs.append(w)
        ys.append(y)
        gs.append(g)
    cfg = {"window_length": window_length, "stride": stride,
           "runs": [(r["run_id"], r["label"], r["wind_seed"]) for r in runs],
           "duration": manifest.get("duration")}
    ws = WindowSet(np.concatenate(xs).astype(np.float32), np.concatenate(ys),
                   np.concatenate(gs), window_length, stride,
                   run_labels={r["run_id"]: int(r["label"]) for r in runs}, config=cfg)
    log.info("corpus: %d windows from %d runs, classes %s", len(ws), len(runs),
             ws.class_histogram())
    return ws


def make_folds(data, k=10, seed=0) -> FoldPlan:
    """Run-level folds, stratified by class.

    Runs of each class are shuffled and dealt round-robin, continuing from the
    fold where the previous class stopped so fold sizes stay balanced. With
    fewer than ``k`` runs in some class a warning is issued: the split remains
    group-safe but some folds will miss that class.
    """
    run_labels = data.run_labels if isinstance(data, WindowSet) else dict(data)
    if k < 2:
        raise InvalidArgument(f"need at least 2 folds, got {k}")
    if k > len(run_labels):
        raise InvalidArgument(f"k={k} exceeds the {len(run_labels)} available runs")
    by_class = {}
    for run, y in sorted(run_labels.items()):
        by_class.setdefault(int(y), []).append(run)
    rng = np.random.default_rng(seed)
    stratified = all(len(v) >= k for v in by_class.values())
    if not stratified:
        warnings.warn(f"some class has fewer than k={k} runs; folds cannot all "
                      "contain every class", stacklevel=2)
    assignments = {}
    pointer = 0
    for y in sorted(by_class):
        runs = by_class[y]
        for i in rng.permutation(len(runs)):
            assignments[runs[i]] = pointer % k
            pointer += 1
    return FoldPlan(k, assignments, seed, stratified)


def save_windowset(ws: WindowSet, out_dir, plan: FoldPlan | None = None, extra=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "windows.npz", "wb") as fh:
        np.savez_compressed(fh, windows=ws.windows.astype(np.float32), labels=ws.labels,
                            group_ids=ws.group_ids.astype(str))
    meta = {
        "shape": list(ws.windows.shape),
        "window_length": ws.window_length,
        "stride": ws.stride,
        "label_map": LABEL_MAP,
        "class_histogram": ws.class_histogram(),
        "run_labels": ws.run_labels,
        "config": ws.config,
        "config_hash": ws.config_hash,
        "normalization_stats": {str(f): s.to_dict() for f, s in ws.normalization_stats.items()},
    }
    if plan is not None:
        meta["fold_plan"] = plan.to_dict()
    if extra:
        meta.update(extra)
    (out_dir / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out_dir


def load_windowset(path):
    """Returns ``(WindowSet, FoldPlan or None, metadata)``."""
    path = Path(path)
    meta = json.loads((path / "dataset.json").read_text())
    with np.load(path / "windows.npz", allow_pickle=False) as data:
        windows, labels, groups = data["windows"], data["labels"], data["group_ids"]
    ws = WindowSet(windows, labels, groups.astype(object), meta["window_length"],
                   meta["stride"], run_labels=meta["run_labels"], config=meta["config"])
    ws.normalization_stats = {int(f): NormStats.from_dict(s)
                              for f, s in meta.get("normalization_stats", {}).items()}
    plan = FoldPlan.from_dict(meta["fold_plan"]) if "fold_plan" in meta else None
    return ws, plan, meta
