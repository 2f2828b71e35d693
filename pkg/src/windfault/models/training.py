"""Training loop and the checkpoint container."""

from __future__ import annotations

import hashlib
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from windfault.errors import ChecksumError, InvalidArgument, NonFiniteLoss, SpecMismatch
from windfault.models.architectures import ModelSpec, build_model

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "windfault-checkpoint/1"


def _batches(n, batch, generator):
    """Shuffled index batches covering every example exactly once.

    A trailing batch of one is merged into the previous batch because batch
    norm cannot normalize a single sample.
    """
    order = torch.randperm(n, generator=generator)
    chunks = list(torch.split(order, batch))
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = torch.cat([chunks[-2], chunks.pop()])
    return chunks


@torch.no_grad()
def mean_loss(model, x, y, batch=256):
    model.eval()
    total = 0.0
    for i in range(0, len(y), batch):
        logits = model.logits(x[i:i + batch])
        total += F.cross_entropy(logits, y[i:i + batch], reduction="sum").item()
    return total / max(len(y), 1)


@torch.no_grad()
def predict_proba(model, x, batch=256):
    """Single deterministic pass: eval mode, dropout off."""
    model.eval()
    if len(x) == 0:
        return np.zeros((0, model.spec.n_classes))
    return torch.cat([model(x[i:i + batch]) for i in range(0, len(x), batch)]).double().numpy()


def fit(model, x, y, epochs=50, batch=32, seed=0, lr=1e-3, x_val=None, y_val=None,
        threads=1, on_epoch=None):
    """Adam on categorical cross-entropy; returns the per-epoch history.

    Deterministic for a fixed seed and thread count.
    """
    if len(y) == 0:
        raise InvalidArgument("training split is empty")
    if int(y.min()) < 0 or int(y.max()) >= model.spec.n_classes:
        raise InvalidArgument("labels outside 0..n_classes-1")
    torch.set_num_threads(threads)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = {"train_loss": [], "val_loss": [], "train_accuracy": []}
    for epoch in range(epochs):
        model.train()
        total, correct = 0.0, 0
        for b, idx in enumerate(_batches(len(y), batch, gen)):
            opt.zero_grad()
            logits = model.logits(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss.item())
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            correct += int((logits.argmax(1) == y[idx]).sum())
        history["train_loss"].append(total / len(y))
        history["train_accuracy"].append(correct / len(y))
        if x_val is not None and len(x_val):
            history["val_loss"].append(mean_loss(model, x_val, y_val))
        if on_epoch:
            on_epoch(epoch, history)
        log.debug("epoch %d loss %.4f", epoch, history["train_loss"][-1])
    return history


@dataclass
class Checkpoint:
    spec: ModelSpec
    state: dict
    metadata: dict = field(default_factory=dict)

    def model(self):
        m = build_model(self.spec)
        m.load_state_dict(self.state)
        m.eval()
        return m


def train(model, windowset, plan, fold, epochs=50, batch=32, seed=0, lr=1e-3, threads=1,
          optimizer="adam"):
    """Train ``model`` on every run outside ``fold``; the held-out runs give val loss."""
    if optimizer.lower() != "adam":
        raise InvalidArgument("only the Adam optimizer is supported")
    x_tr, y_tr, x_te, y_te, _ = windowset.fold_split(plan, fold)
    xt = model.prepare(x_tr)
    yt = torch.as_tensor(y_tr, dtype=torch.long)
    xv = model.prepare(x_te) if len(y_te) else None
    yv = torch.as_tensor(y_te, dtype=torch.long) if len(y_te) else None
    start = time.perf_counter()
    history = fit(model, xt, yt, epochs, batch, seed, lr, xv, yv, threads)
    stats = windowset.normalization_stats[fold]
    meta = {
        "epochs": epochs, "batch_size": batch, "optimizer": "adam", "learning_rate": lr,
        "seed": seed, "fold": fold, "history": history,
        "final_train_loss": history["train_loss"][-1],
        "final_val_loss": history["val_loss"][-1] if history["val_loss"] else None,
        "normalization": stats.to_dict(), "dataset_hash": windowset.config_hash,
        "train_seconds": time.perf_counter() - start,
    }
    return Checkpoint(model.spec, {k: v.detach().clone() for k, v in model.state_dict().items()},
                      meta)


def _state_digest(state):
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "spec": ckpt.spec.to_dict(),
        "spec_hash": ckpt.spec.hash,
        "state": ckpt.state,
        "metadata": ckpt.metadata,
        "checksum": _state_digest(ckpt.state),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> Checkpoint:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ChecksumError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ChecksumError(f"{path}: not a checkpoint file")
    if _state_digest(payload["state"]) != payload["checksum"]:
        raise ChecksumError(f"{path}: weight checksum mismatch")
    spec = ModelSpec.from_dict(payload["spec"])
    if spec.hash != payload["spec_hash"]:
        raise ChecksumError(f"{path}: spec hash mismatch")
    if expected_spec is not None and expected_spec.hash != spec.hash:
        raise SpecMismatch(f"{path}: trained with spec {spec.hash}, expected {expected_spec.hash}")
    return Checkpoint(spec, payload["state"], payload["metadata"])


def normalize_input(ckpt: Checkpoint, windows):
    stats = ckpt.metadata["normalization"]
    return (np.asarray(windows, dtype=np.float64) - np.asarray(stats["mean"])) / np.asarray(stats["std"])
