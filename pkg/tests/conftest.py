import os
import warnings

import numpy as np
import pytest
import torch

torch.set_num_threads(1)
os.environ.setdefault("MPLBACKEND", "Agg")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Two runs per class, 10 s each: 8 windows per run, 128 windows total."""
    from windfault.dataset import build_corpus, make_folds
    from windfault.turbsim.io import simulate_corpus

    out = tmp_path_factory.mktemp("corpus")
    manifest = simulate_corpus(out, {k: 2 for k in range(8)}, 12.5, seed=11)
    manifest["_root"] = str(out)
    ws = build_corpus(manifest)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = make_folds(ws, k=2, seed=0)
    return ws, plan, out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
