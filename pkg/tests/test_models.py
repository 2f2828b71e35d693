import numpy as np
import pytest
import torch

from windfault.errors import ChecksumError, InvalidArgument, SpecMismatch
from windfault.models.architectures import (
    ARCHITECTURES,
    ModelSpec,
    build_model,
    fuse,
    parameter_checksum,
    parameter_count,
)
from windfault.models.convlstm import ConvLSTM, convlstm_forward
from windfault.models.training import (
    fit,
    load_checkpoint,
    mean_loss,
    predict_proba,
    save_checkpoint,
    train,
)


def toy_layer(activation="tanh", peephole="conv", seed=0):
    torch.manual_seed(seed)
    return ConvLSTM(2, 3, (1, 3), activation, peephole).double()


def toy_loss(layer, x, target):
    out, (y, c) = convlstm_forward(layer, x)
    return ((out - target) ** 2).sum() + (c**2).sum()


def finite_difference_errors(layer, n_samples=6, eps=1e-3, seed=0):
    """Relative error of autograd vs central differences on sampled weights."""
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, 2, 2, 1, 4, generator=g, dtype=torch.float64)  # 2 steps, 1x4
    target = torch.randn(1, 2, 3, 1, 4, generator=g, dtype=torch.float64)
    layer.zero_grad()
    toy_loss(layer, x, target).backward()
    errors = []
    for name, p in layer.named_parameters():
        flat = p.data.view(-1)
        for idx in torch.randint(0, flat.numel(), (n_samples,), generator=g).tolist():
            old = flat[idx].item()
            with torch.no_grad():
                flat[idx] = old + eps
                up = toy_loss(layer, x, target).item()
                flat[idx] = old - eps
                down = toy_loss(layer, x, target).item()
                flat[idx] = old
            numeric = (up - down) / (2 * eps)
            analytic = p.grad.view(-1)[idx].item()
            errors.append((name, abs(analytic - numeric) / max(abs(numeric), 1e-8), analytic))
    return errors


# ---------------------------------------------------------------- ConvLSTM

@pytest.mark.parametrize("peephole", ["conv", "elementwise", "none"])
def test_convlstm_gradient_matches_central_difference(peephole):
    errs = finite_difference_errors(toy_layer("tanh", peephole))
    assert max(e for _, e, _ in errs) <= 1e-4, errs


def test_convlstm_relu_gradient_matches_central_difference():
    errs = finite_difference_errors(toy_layer("relu", "conv", seed=3), seed=3)
    assert max(e for _, e, _ in errs) <= 1e-4, errs


def saturate(layer):
    cell = layer.cell
    f = cell.filters
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
        bias = cell.input_conv.bias
        bias[f:2 * f] = -1e4  # input gate closed
        bias[2 * f:3 * f] = 1e4  # forget gate open
        cell.input_conv.weight.normal_()


def test_saturated_gates_hold_cell_state():
    layer = toy_layer()
    saturate(layer)
    x = torch.randn(2, 6, 2, 1, 4, dtype=torch.float64)
    c0 = torch.randn(2, 3, 1, 4, dtype=torch.float64)
    y0 = torch.randn(2, 3, 1, 4, dtype=torch.float64)
    _, (_, c) = convlstm_forward(layer, x, (y0, c0))
    assert torch.equal(c, c0)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_zero_weights_zero_output(activation):
    layer = toy_layer(activation)
    with torch.no_grad():
        for p in layer.parameters():
            p.zero_()
    out, (y, c) = convlstm_forward(layer, torch.randn(3, 4, 2, 1, 4, dtype=torch.float64))
    assert torch.count_nonzero(out) == 0 and torch.count_nonzero(c) == 0


def test_same_padding_shapes():
    layer = ConvLSTM(5, 7, (1, 5))
    out, (y, c) = layer(torch.randn(2, 5, 5, 1, 25))
    assert out.shape == (2, 5, 7, 1, 25)
    assert y.shape == c.shape == (2, 7, 1, 25)


def test_convlstm_shape_errors():
    layer = ConvLSTM(5, 7, (1, 5))
    with pytest.raises(InvalidArgument):
        layer(torch.randn(2, 5, 4, 1, 25))
    with pytest.raises(InvalidArgument):
        convlstm_forward(layer, torch.randn(2, 0, 5, 1, 25))
    with pytest.raises(InvalidArgument):
        convlstm_forward(layer, torch.randn(2, 3, 5, 1, 25),
                         (torch.zeros(2, 7, 1, 24), torch.zeros(2, 7, 1, 24)))
    with pytest.raises(InvalidArgument):
        ConvLSTM(5, 7, (1, 4))


# ---------------------------------------------------------------- architectures

@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_softmax_rows_sum_to_one(arch):
    model = build_model(ModelSpec(arch), seed=0).eval()
    x = model.prepare(np.random.default_rng(0).normal(size=(4, 125, 5)))
    probs = model(x)
    assert probs.shape == (4, 8)
    assert torch.allclose(probs.sum(1), torch.ones(4), atol=1e-5)


def test_casu2net_accepts_sequence_shape():
    model = build_model(ModelSpec("casu2net"), seed=0).eval()
    assert model(torch.randn(4, 5, 1, 25, 5)).shape == (4, 8)
    with pytest.raises(InvalidArgument):
        model.features(torch.randn(4, 125, 5))


def test_multiheaded_fusion_width():
    model = build_model(ModelSpec("multi-headed"), seed=0)
    expected = sum(f * (125 - kh + 1) * (5 - kw + 1) for f, (kh, kw) in
                   [(100, (1, 5)), (90, (7, 5)), (80, (20, 5))])
    assert expected == 31690
    assert sum(model.widths) == expected
    assert model.tap(torch.randn(2, 125, 5), "fusion1").shape == (2, expected)


def test_casu2net_branch_layout():
    model = build_model(ModelSpec("casu2net"), seed=0)
    filters = [[layer.cell.filters for layer in b] for b in model.branches]
    assert filters == [[32, 32], [32, 32, 64], [32, 32, 64, 64]]
    assert model.widths == [32 * 25, 64 * 25, 64 * 25]
    assert len(model.blocks) == 4
    x = torch.randn(2, 5, 1, 25, 5)
    assert model.tap(x, "fusion1").shape == (2, sum(model.widths))
    assert model.tap(x, "fusion2").shape == (2, 4 * 64)


def test_fuse_widths_identity_offsets():
    parts = [torch.randn(3, w) for w in (64, 128, 256)]
    out, offsets = fuse(parts, return_offsets=True)
    assert out.shape == (3, 448)
    for p, a, b in zip(parts, offsets, offsets[1:]):
        assert torch.equal(out[:, a:b], p)
    x = torch.randn(3, 10)
    assert torch.equal(fuse([x]), x)
    with pytest.raises(InvalidArgument):
        fuse([torch.randn(3, 4), torch.randn(2, 4)])


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_seeded_init_reproducible(arch):
    a = build_model(ModelSpec(arch), seed=5)
    b = build_model(ModelSpec(arch), seed=5)
    assert parameter_checksum(a) == parameter_checksum(b)
    assert parameter_count(a) == parameter_count(b)
    assert parameter_checksum(build_model(ModelSpec(arch), seed=6)) != parameter_checksum(a)


@pytest.mark.parametrize("arch,layers,name", [
    ("casu2net", {"branches": [[[32, [1, 4]]]], "fc_units": [8, 8], "fc_dropout": 0.5},
     "branch1.layer1"),
    ("multi-headed", {"heads": [[10, [200, 5]]], "head_dropout": 0.2, "fc_units": [8, 8],
                      "fc_dropout": 0.5}, "heads[0]"),
    ("simple-cnn", {"conv": [[8, 3], [8, 2]], "conv_dropout": 0.2, "fc_units": [8, 8],
                    "fc_dropout": 0.5}, "conv[1]"),
])
def test_invalid_spec_names_layer(arch, layers, name):
    with pytest.raises(InvalidArgument, match=name.replace("[", r"\[").replace("]", r"\]")):
        build_model(ModelSpec(arch, layers))


def test_unknown_architecture():
    with pytest.raises(InvalidArgument):
        ModelSpec("transformer")


# ---------------------------------------------------------------- training

def _subset(small_corpus, n_per_class=8):
    ws, plan, _ = small_corpus
    idx = np.concatenate([np.flatnonzero(ws.labels == c)[:n_per_class] for c in range(8)])
    x = ws.windows[idx].astype(np.float64)
    x = (x - x.reshape(-1, 5).mean(0)) / x.reshape(-1, 5).std(0)
    return x, ws.labels[idx]


class _Reached(Exception):
    pass


def overfit_epochs(model, x, y, max_epochs=200):
    xt = model.prepare(x)
    yt = torch.as_tensor(y, dtype=torch.long)
    reached = {}

    def check(epoch, _history):
        acc = float((predict_proba(model, xt).argmax(1) == y).mean())
        reached["acc"] = acc
        if acc >= 0.99:
            reached["epoch"] = epoch + 1
            raise _Reached

    try:
        fit(model, xt, yt, epochs=max_epochs, batch=32, seed=0, on_epoch=check)
    except _Reached:
        pass
    return reached


@pytest.mark.slow
def test_casu2net_overfits_64_windows(small_corpus):
    x, y = _subset(small_corpus)
    assert len(y) == 64
    reached = overfit_epochs(build_model(ModelSpec("casu2net"), seed=0), x, y)
    assert reached.get("epoch") is not None and reached["epoch"] <= 200, reached


def test_one_epoch_deterministic_and_improves(small_corpus):
    x, y = _subset(small_corpus, 4)
    losses, initial = [], []
    for _ in range(2):
        model = build_model(ModelSpec("simple-cnn"), seed=1)
        xt, yt = model.prepare(x), torch.as_tensor(y)
        initial.append(mean_loss(model, xt, yt))
        fit(model, xt, yt, epochs=1, batch=8, seed=1)
        losses.append(mean_loss(model, xt, yt))
    assert losses[0] == losses[1]
    assert losses[0] < initial[0]


def test_fit_rejects_bad_labels():
    model = build_model(ModelSpec("simple-cnn"), seed=0)
    with pytest.raises(InvalidArgument):
        fit(model, torch.zeros(4, 125, 5), torch.tensor([0, 1, 2, 9]), epochs=1)


@pytest.fixture(scope="module")
def trained(small_corpus):
    ws, plan, _ = small_corpus
    model = build_model(ModelSpec("simple-cnn"), seed=2)
    return train(model, ws, plan, 0, epochs=2, batch=32, seed=2), ws, plan


def test_checkpoint_metadata(trained):
    ckpt, ws, _ = trained
    m = ckpt.metadata
    assert (m["epochs"], m["batch_size"], m["fold"], m["optimizer"]) == (2, 32, 0, "adam")
    assert len(m["history"]["train_loss"]) == 2 and len(m["history"]["val_loss"]) == 2
    assert m["dataset_hash"] == ws.config_hash


def test_checkpoint_round_trip(trained, tmp_path):
    ckpt, ws, plan = trained
    _, _, x_te, _, _ = ws.fold_split(plan, 0)
    before = predict_proba(ckpt.model(), ckpt.model().prepare(x_te))
    back = load_checkpoint(save_checkpoint(ckpt, tmp_path / "m.pt"), expected_spec=ckpt.spec)
    after = predict_proba(back.model(), back.model().prepare(x_te))
    assert np.array_equal(before, after)
    assert back.spec == ckpt.spec and back.metadata == ckpt.metadata


def test_checkpoint_spec_mismatch(trained, tmp_path):
    ckpt, _, _ = trained
    path = save_checkpoint(ckpt, tmp_path / "m.pt")
    with pytest.raises(SpecMismatch):
        load_checkpoint(path, expected_spec=ModelSpec("simple-cnn").with_dropout(0.1))


def test_checkpoint_corruption_detected(trained, tmp_path):
    ckpt, _, _ = trained
    path = save_checkpoint(ckpt, tmp_path / "m.pt")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(ChecksumError):
        load_checkpoint(tmp_path / "junk.pt")
