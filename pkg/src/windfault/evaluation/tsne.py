"""Two-dimensional T-SNE embeddings of fusion-layer features."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.manifold import TSNE

from windfault.errors import InvalidArgument

LAYERS = ("fusion1", "fusion2")


def tsne_embed(features, perplexity=30.0, seed=0, max_iter=1000):
    """Exact T-SNE of ``features`` (N x D) into N x 2."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    n = len(x)
    if n <= 3 * perplexity:
        raise InvalidArgument(f"need more than 3 x perplexity = {3 * perplexity:g} points, got {n}")
    if not np.isfinite(x).all():
        raise InvalidArgument("features contain NaN or infinity")
    if np.ptp(x, axis=0).max() == 0.0:
        raise InvalidArgument("all feature vectors are identical; add a small jitter before "
                              "embedding")
    model = TSNE(n_components=2, perplexity=perplexity, method="exact", init="pca",
                 random_state=seed, max_iter=max_iter)
    return model.fit_transform(x)


def layer_features(model, windows, layer="fusion1", batch=256):
    """Activations of ``layer`` for prepared-or-raw windows, dropout off."""
    if layer not in LAYERS:
        raise InvalidArgument(f"layer must be one of {LAYERS}, got {layer!r}")
    model.eval()
    x = model.prepare(windows)
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch):
            out.append(model.tap(x[i:i + batch], layer).double().numpy())
    return np.concatenate(out)
