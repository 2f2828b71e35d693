"""Simple CNN, multi-headed CNN and CASU2Net classifiers.

Every model splits into a deterministic ``features`` stage and a ``head`` that
contains all dropout layers. Monte Carlo inference therefore computes features
once and only resamples the head.
"""

from __future__ import annotations

import contextlib
import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from windfault.errors import InvalidArgument
from windfault.hashing import config_hash
from windfault.models.convlstm import ACTIVATIONS, PEEPHOLES, ConvLSTM

ARCHITECTURES = ("simple-cnn", "multi-headed", "casu2net")
N_CLASSES = 8
WINDOW, SENSORS, CHUNK = 125, 5, 25


def _default_layers(arch):
    head = {"fc_units": [128, 64], "fc_dropout": 0.5}
    if arch == "simple-cnn":
        return {"conv": [[32, 3], [32, 3], "batchnorm", [64, 3], [64, 3]],
                "conv_dropout": 0.8, **head}
    if arch == "multi-headed":
        return {"heads": [[100, [1, 5]], [90, [7, 5]], [80, [20, 5]]],
                "head_dropout": 0.2, **head}
    if arch == "casu2net":
        return {"branches": [
                    [[32, [1, 5]], [32, [1, 5]]],
                    [[32, [1, 5]], [32, [1, 5]], [64, [1, 5]]],
                    [[32, [1, 5]], [32, [1, 5]], [64, [1, 3]], [64, [1, 3]]],
                ],
                "activation": "relu", "peephole": "conv", **head}
    raise InvalidArgument(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")


def normalize_arch(name: str) -> str:
    key = str(name).lower().replace("_", "-")
    aliases = {"simplecnn": "simple-cnn", "simple": "simple-cnn", "multiheaded": "multi-headed",
               "multi": "multi-headed", "casu2net": "casu2net", "casu": "casu2net"}
    key = aliases.get(key.replace("-", ""), key)
    if key not in ARCHITECTURES:
        raise InvalidArgument(f"unknown architecture {name!r}; choose from {ARCHITECTURES}")
    return key


@dataclass
class ModelSpec:
    architecture: str
    layers: dict = field(default_factory=dict)
    n_classes: int = N_CLASSES

    def __post_init__(self):
        self.architecture = normalize_arch(self.architecture)
        if not self.layers:
            self.layers = _default_layers(self.architecture)

    @classmethod
    def default(cls, arch) -> "ModelSpec":
        return cls(arch)

    @property
    def input_shape(self):
        if self.architecture == "casu2net":
            return (WINDOW // CHUNK, 1, CHUNK, SENSORS)
        return (WINDOW, SENSORS)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["architecture"], copy.deepcopy(d["layers"]), d.get("n_classes", N_CLASSES))

    @property
    def hash(self):
        return config_hash(self.to_dict())

    def with_dropout(self, rate) -> "ModelSpec":
        """Copy with every dropout rate replaced by ``rate``."""
        layers = copy.deepcopy(self.layers)
        for key in ("fc_dropout", "conv_dropout", "head_dropout"):
            if key in layers:
                layers[key] = rate
        return ModelSpec(self.architecture, layers, self.n_classes)


class MCDropout(nn.Module):
    """Dropout that can stay stochastic in eval mode.

    ``mc`` turns sampling on outside training; ``generator`` (when set) makes
    the masks reproducible per Monte Carlo pass.
    """

    def __init__(self, p):
        super().__init__()
        if not 0 <= p < 1:
            raise InvalidArgument(f"dropout rate must lie in [0, 1), got {p}")
        self.p = float(p)
        self.mc = False
        self.generator = None

    def forward(self, x):
        if self.p == 0 or not (self.training or self.mc):
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)

    def extra_repr(self):
        return f"p={self.p}"


@contextlib.contextmanager
def mc_sampling(model, generator=None):
    """Eval-mode model with dropout sampling on; batch norm uses running stats."""
    drops = [m for m in model.modules() if isinstance(m, MCDropout)]
    was_training = model.training
    model.eval()
    for m in drops:
        m.mc, m.generator = True, generator
    try:
        yield model
    finally:
        for m in drops:
            m.mc, m.generator = False, None
        model.train(was_training)


def fuse(features, return_offsets=False):
    """Concatenate flattened feature tensors along the feature axis."""
    if not features:
        raise InvalidArgument("nothing to fuse")
    batch = {f.shape[0] for f in features}
    if len(batch) != 1:
        raise InvalidArgument(f"batch sizes differ across fused inputs: {sorted(batch)}")
    flat = [f.reshape(f.shape[0], -1) for f in features]
    out = flat[0] if len(flat) == 1 else torch.cat(flat, dim=1)
    if return_offsets:
        offsets = np.cumsum([0] + [f.shape[1] for f in flat]).tolist()
        return out, offsets
    return out


class FCBlock(nn.Module):
    """batch norm -> dense -> ReLU -> MC dropout -> dense -> ReLU."""

    def __init__(self, in_features, units=(128, 64), dropout=0.5):
        super().__init__()
        self.norm = nn.BatchNorm1d(in_features)
        self.fc1 = nn.Linear(in_features, units[0])
        self.drop = MCDropout(dropout)
        self.fc2 = nn.Linear(units[0], units[1])
        self.out_features = units[1]

    def forward(self, x):
        x = torch.relu(self.fc1(self.norm(x)))
        return torch.relu(self.fc2(self.drop(x)))


class _Classifier(nn.Module):
    input_kind = "window"

    def logits(self, x):
        return self.head(self.features(x))

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=-1)

    @staticmethod
    def prepare(windows):
        return torch.as_tensor(np.asarray(windows), dtype=torch.float32)

    def tap(self, x, layer):
        raise NotImplementedError


class SimpleCNN(_Classifier):
    def __init__(self, layers, n_classes=N_CLASSES):
        super().__init__()
        convs = []
        ch = SENSORS
        for i, item in enumerate(layers["conv"]):
            if item == "batchnorm":
                convs.append(nn.BatchNorm1d(ch))
                continue
            filters, k = item
            if filters < 1 or k < 1 or k % 2 == 0:
                raise InvalidArgument(f"conv[{i}]: need filters >= 1 and an odd kernel, got {item}")
            convs += [nn.Conv1d(ch, filters, k, padding=k // 2), nn.ReLU()]
            ch = filters
        self.convs = nn.Sequential(*convs)
        self.flat_width = ch * WINDOW
        self.drop = MCDropout(layers["conv_dropout"])
        self.block = FCBlock(self.flat_width, layers["fc_units"], layers["fc_dropout"])
        self.out = nn.Linear(self.block.out_features, n_classes)

    def features(self, x):
        # (B, 125, 5) -> (B, 5, 125): sensors are channels, convolution runs along time
        return self.convs(x.transpose(1, 2)).flatten(1)

    def head(self, feats):
        return self.out(self.block(self.drop(feats)))

    def tap(self, x, layer):
        feats = self.features(x)
        if layer == "fusion1":
            return feats
        return self.block(self.drop(feats))


class MultiHeaded(_Classifier):
    def __init__(self, layers, n_classes=N_CLASSES):
        super().__init__()
        self.heads = nn.ModuleList()
        self.norms = nn.ModuleList()
        self.widths = []
        for i, (filters, (kh, kw)) in enumerate(layers["heads"]):
            if filters < 1 or not (1 <= kh <= WINDOW and 1 <= kw <= SENSORS):
                raise InvalidArgument(f"heads[{i}]: invalid filters/kernel {filters}, {(kh, kw)}")
            self.heads.append(nn.Conv2d(1, filters, (kh, kw)))
            self.norms.append(nn.BatchNorm2d(filters))
            self.widths.append(filters * (WINDOW - kh + 1) * (SENSORS - kw + 1))
        self.drops = nn.ModuleList(MCDropout(layers["head_dropout"]) for _ in self.heads)
        self.block = FCBlock(sum(self.widths), layers["fc_units"], layers["fc_dropout"])
        self.out = nn.Linear(self.block.out_features, n_classes)

    def features(self, x):
        x = x.unsqueeze(1)  # (B, 1, 125, 5)
        return [norm(torch.relu(conv(x))).flatten(1) for conv, norm in zip(self.heads, self.norms)]

    def _fused(self, feats):
        return fuse([d(f) for d, f in zip(self.drops, feats)])

    def head(self, feats):
        return self.out(self.block(self._fused(feats)))

    def tap(self, x, layer):
        fused = self._fused(self.features(x))
        return fused if layer == "fusion1" else self.block(fused)


class CASU2Net(_Classifier):
    """Three ConvLSTM branches, two early-fusion steps, one softmax output."""

    input_kind = "sequence"

    def __init__(self, layers, n_classes=N_CLASSES):
        super().__init__()
        act = layers.get("activation", "tanh")
        peep = layers.get("peephole", "conv")
        if act not in ACTIVATIONS:
            raise InvalidArgument(f"activation: unknown {act!r}")
        if peep not in PEEPHOLES:
            raise InvalidArgument(f"peephole: unknown {peep!r}")
        self.branches = nn.ModuleList()
        self.widths = []
        for b, branch in enumerate(layers["branches"]):
            if not branch:
                raise InvalidArgument(f"branch{b + 1}: no layers")
            mods, ch = [], SENSORS
            for j, (filters, kernel) in enumerate(branch):
                kernel = tuple(kernel)
                if filters < 1 or len(kernel) != 2 or kernel[0] != 1 or kernel[1] % 2 == 0 \
                        or kernel[1] > CHUNK:
                    raise InvalidArgument(
                        f"branch{b + 1}.layer{j + 1}: invalid filters/kernel {filters}, {kernel}")
                last = j == len(branch) - 1
                mods.append(ConvLSTM(ch, filters, kernel, act, peep, return_sequences=not last))
                ch = filters
            self.branches.append(nn.ModuleList(mods))
            self.widths.append(ch * CHUNK)
        units, rate = layers["fc_units"], layers["fc_dropout"]
        fc_inputs = self.widths + [sum(self.widths)]
        self.blocks = nn.ModuleList(FCBlock(w, units, rate) for w in fc_inputs)
        self.out = nn.Linear(units[1] * len(self.blocks), n_classes)

    @staticmethod
    def prepare(windows):
        w = np.asarray(windows)
        if w.shape[-2:] == (WINDOW, SENSORS):
            w = w.reshape(-1, WINDOW // CHUNK, 1, CHUNK, SENSORS)
        return torch.as_tensor(w, dtype=torch.float32)

    def features(self, x):
        if x.dim() != 5 or tuple(x.shape[1:]) != (WINDOW // CHUNK, 1, CHUNK, SENSORS):
            raise InvalidArgument(f"CASU2Net expects (B, 5, 1, 25, 5), got {tuple(x.shape)}")
        # (B, T, rows, cols, sensors) -> (B, T, sensors, rows, cols)
        seq = x.permute(0, 1, 4, 2, 3)
        outs = []
        for branch in self.branches:
            h = seq
            for layer in branch:
                h, _ = layer(h)
            outs.append(h.flatten(1))
        return outs

    def fusion1(self, feats):
        return fuse(feats)

    def fusion2(self, feats):
        parts = list(feats) + [self.fusion1(feats)]
        return fuse([blk(p) for blk, p in zip(self.blocks, parts)])

    def head(self, feats):
        return self.out(self.fusion2(feats))

    def tap(self, x, layer):
        feats = self.features(x)
        return self.fusion1(feats) if layer == "fusion1" else self.fusion2(feats)


_BUILDERS = {"simple-cnn": SimpleCNN, "multi-headed": MultiHeaded, "casu2net": CASU2Net}


def build_model(spec: ModelSpec, seed=None):
    """Instantiate ``spec``; with ``seed`` the initial weights are reproducible."""
    if spec.n_classes < 2:
        raise InvalidArgument("n_classes must be at least 2")
    if seed is not None:
        torch.manual_seed(seed)
    try:
        model = _BUILDERS[spec.architecture](spec.layers, spec.n_classes)
    except KeyError as exc:
        raise InvalidArgument(f"{spec.architecture}: missing layer field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgument):
            raise
        raise InvalidArgument(f"{spec.architecture}: malformed layer entry ({exc})") from None
    model.spec = spec
    return model


def parameter_count(model) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_checksum(model) -> float:
    return float(sum(p.detach().double().sum().item() * (i + 1)
                     for i, p in enumerate(model.parameters())))
