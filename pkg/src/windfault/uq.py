"""Monte Carlo dropout inference and uncertainty summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from windfault.errors import InvalidArgument
from windfault.models.architectures import MCDropout, mc_sampling
from windfault.models.training import Checkpoint

MAX_ENTROPY = math.log(8)


def entropy(probs):
    """Predictive entropy in nats, row-wise; 0 ln 0 is taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return np.clip(terms.sum(axis=-1), 0.0, None)


@dataclass
class PredictionDistribution:
    mean_probs: np.ndarray
    predicted_class: int
    entropy: float
    std: np.ndarray
    per_pass_probs: np.ndarray | None = None


@dataclass
class MCResult:
    """Batched output of :func:`mc_predict`; index it for one input's distribution."""

    mean_probs: np.ndarray  # N x C
    std: np.ndarray  # N x C
    k: int
    seed: int
    per_pass_probs: np.ndarray | None = None  # K x N x C

    @property
    def predicted(self):
        # np.argmax returns the first maximum, so ties go to the lowest class
        return self.mean_probs.argmax(axis=1)

    @property
    def entropy(self):
        return entropy(self.mean_probs)

    def __len__(self):
        return len(self.mean_probs)

    def __getitem__(self, i) -> PredictionDistribution:
        return PredictionDistribution(
            self.mean_probs[i], int(self.predicted[i]), float(self.entropy[i]), self.std[i],
            None if self.per_pass_probs is None else self.per_pass_probs[:, i])


def pass_generator(seed, index):
    """Independent torch generator for MC pass ``index``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint64)
    return torch.Generator().manual_seed(int(state[0] >> np.uint64(1)))


@torch.no_grad()
def mc_predict(model, inputs, k=200, seed=0, retain=False, batch=512) -> MCResult:
    """Average ``k`` dropout-sampled softmax outputs per input.

    ``model`` is a built model or a Checkpoint; ``inputs`` are normalized
    windows (N x 125 x 5) or an already prepared tensor. The dropout-free
    feature stage runs once; only the head is resampled. Pass ``i`` always
    draws its masks from the stream derived from ``(seed, i)``.
    """
    if k < 1:
        raise InvalidArgument(f"K must be >= 1, got {k}")
    if isinstance(model, Checkpoint):
        model = model.model()
    x = inputs if torch.is_tensor(inputs) else model.prepare(inputs)
    model.eval()
    feats = [model.features(x[i:i + batch]) for i in range(0, len(x), batch)]
    n = len(x)
    mean = None
    m2 = None
    kept = [] if retain else None
    with mc_sampling(model) as m:
        drops = [mod for mod in m.modules() if isinstance(mod, MCDropout)]
        for p in range(k):
            gen = pass_generator(seed, p)
            for d in drops:
                d.generator = gen
            probs = np.concatenate(
                [torch.softmax(m.head(f), -1).double().numpy() for f in feats]
            ) if feats else np.zeros((0, model.spec.n_classes))
            if mean is None:
                mean = np.zeros_like(probs)
                m2 = np.zeros_like(probs)
            # Welford update in float64
            delta = probs - mean
            mean += delta / (p + 1)
            m2 += delta * (probs - mean)
            if kept is not None:
                kept.append(probs)
    std = np.sqrt(m2 / k)
    per_pass = np.stack(kept) if kept is not None else None
    if n == 0:
        mean = np.zeros((0, model.spec.n_classes))
        std = mean.copy()
    return MCResult(mean, std, k, seed, per_pass)


def from_probs(per_pass_probs, seed=0) -> MCResult:
    """Build an MCResult from explicit per-pass probabilities (K x N x C)."""
    pp = np.asarray(per_pass_probs, dtype=np.float64)
    if pp.ndim != 3 or pp.shape[0] < 1:
        raise InvalidArgument("per-pass probabilities must be K x N x C with K >= 1")
    return MCResult(pp.mean(axis=0), pp.std(axis=0), pp.shape[0], seed, pp)


def uncertainty_report(mean_probs, labels, bins=20) -> dict:
    """Mean entropy on correct vs incorrect predictions plus histograms."""
    if isinstance(mean_probs, MCResult):
        mean_probs = mean_probs.mean_probs
    elif isinstance(mean_probs, (list, tuple)) and mean_probs and \
            isinstance(mean_probs[0], PredictionDistribution):
        mean_probs = np.stack([d.mean_probs for d in mean_probs])
    probs = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(probs) != len(labels):
        raise InvalidArgument(f"{len(probs)} distributions but {len(labels)} labels")
    ent = entropy(probs)
    correct = probs.argmax(axis=1) == labels if len(probs) else np.zeros(0, dtype=bool)
    edges = np.linspace(0.0, math.log(probs.shape[1]) if probs.ndim == 2 else MAX_ENTROPY,
                        bins + 1)

    def _mean(mask):
        return float(ent[mask].mean()) if mask.any() else None

    return {
        "n": int(len(labels)),
        "n_correct": int(correct.sum()),
        "n_incorrect": int((~correct).sum()),
        "mean_entropy": float(ent.mean()) if len(ent) else None,
        "mean_entropy_correct": _mean(correct),
        "mean_entropy_incorrect": _mean(~correct),
        "histogram_edges": edges.tolist(),
        "histogram_correct": np.histogram(ent[correct], edges)[0].tolist(),
        "histogram_incorrect": np.histogram(ent[~correct], edges)[0].tolist(),
    }


def export_predictions(path, window_ids, run_ids, labels, mean_probs, fold=None):
    """One CSV row per window: ids, true label, mean probabilities, class, entropy."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    probs = np.asarray(mean_probs, dtype=np.float64)
    pred = probs.argmax(axis=1)
    ent = entropy(probs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["window_id", "run_id", "true_label"]
        if fold is not None:
            head.append("fold")
        w.writerow(head + [f"p{c}" for c in range(probs.shape[1])] + ["predicted", "entropy"])
        for i in range(len(probs)):
            row = [int(window_ids[i]), run_ids[i], int(labels[i])]
            if fold is not None:
                row.append(int(fold[i]) if np.ndim(fold) else int(fold))
            w.writerow(row + [repr(float(v)) for v in probs[i]] + [int(pred[i]), repr(float(ent[i]))])
    return path
