import json
from pathlib import Path

import numpy as np
import pytest

from mmen.autodiff import ShapeError, Tensor
from mmen.data import make_two_moons
from mmen.nets import (
    CheckpointError,
    Layer,
    ModelBundle,
    Network,
    NetworkSpec,
    build,
    forward,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)
from mmen.trainer import ModelConfig, TrainConfig, build_bundle, pretrain

GOLDEN = Path(__file__).parent / "data" / "golden_gd.json"


def param_bytes(net):
    return b"".join(p.values.tobytes() for p in net.parameters())


def test_build_is_deterministic():
    spec = NetworkSpec(2, (8,), 3, seed=7)
    assert param_bytes(build(spec, "classifier")) == param_bytes(build(spec, "classifier"))


def test_different_seeds_differ():
    a = build(NetworkSpec(2, (8,), 3, seed=7), "classifier")
    b = build(NetworkSpec(2, (8,), 3, seed=8), "classifier")
    assert param_bytes(a) != param_bytes(b)


def test_biases_start_at_zero():
    net = build(NetworkSpec(4, (6, 5), 3, seed=1), "discriminator")
    for layer in net.layers:
        assert not layer.bias.values.any()


def test_weights_within_he_uniform_bound():
    net = build(NetworkSpec(5, (16, 7), 3, seed=2), "generator")
    for layer in net.layers:
        fan_in = layer.weight.shape[0]
        assert np.abs(layer.weight.values).max() <= np.sqrt(6.0 / fan_in)


def test_parameter_count():
    net = build(NetworkSpec(3, (10, 4), 2), "classifier")
    assert net.n_parameters() == (3 * 10 + 10) + (10 * 4 + 4) + (4 * 2 + 2)


def test_zero_dimension_rejected():
    with pytest.raises(ValueError):
        NetworkSpec(0, (4,), 2)
    with pytest.raises(ValueError):
        NetworkSpec(2, (0,), 2)


def test_heads_need_two_classes():
    with pytest.raises(ValueError):
        build(NetworkSpec(2, (), 1), "classifier")
    with pytest.raises(ValueError):
        build(NetworkSpec(2, (), 3), "domain_classifier")


def test_single_layer_identity_generator_is_relu_plus_bias():
    net = Network(
        NetworkSpec(3, (), 3),
        "generator",
        [Layer(Tensor(np.eye(3)), Tensor([0.5, -1.0, 0.0]), activate=True)],
    )
    x = np.array([[1.0, 0.5, -2.0], [-1.0, 2.0, 0.25]])
    np.testing.assert_array_equal(forward(net, x).values, np.maximum(x + [0.5, -1.0, 0.0], 0))


def test_heads_emit_raw_logits_generator_activates():
    g = build(NetworkSpec(2, (4,), 3, seed=0), "generator")
    d = build(NetworkSpec(2, (4,), 3, seed=0), "discriminator")
    assert g.layers[-1].activate and not d.layers[-1].activate
    x = np.random.default_rng(0).normal(size=(50, 2))
    assert (forward(d, x).values < 0).any()
    assert (forward(g, x).values >= 0).all()


def test_forward_preserves_batch_order():
    net = build(NetworkSpec(3, (5,), 2, seed=3), "classifier")
    x = np.random.default_rng(1).normal(size=(7, 3))
    perm = np.random.default_rng(2).permutation(7)
    out = forward(net, x).values
    np.testing.assert_array_equal(forward(net, x[perm]).values, out[perm])
    assert out.shape == (7, 2)


def test_forward_dim_mismatch():
    net = build(NetworkSpec(3, (5,), 2), "classifier")
    with pytest.raises(ShapeError, match="expects"):
        forward(net, np.zeros((2, 4)))


def test_golden_generator_discriminator_activations():
    gold = json.loads(GOLDEN.read_text())
    gi, gh, go, gs = gold["g_spec"]
    di, dh, do, ds = gold["d_spec"]
    g = build(NetworkSpec(gi, gh, go, seed=gs), "generator")
    d = build(NetworkSpec(di, dh, do, seed=ds), "discriminator")
    out = forward(d, forward(g, np.array(gold["x"]))).values
    expected = np.array([[float.fromhex(v) for v in row] for row in gold["logits_hex"]])
    np.testing.assert_array_equal(out, expected)


def test_bundle_validates_dimension_chain():
    g = build(NetworkSpec(2, (4,), 6), "generator")
    with pytest.raises(ShapeError):
        ModelBundle(g=g, d=build(NetworkSpec(5, (), 3), "discriminator"))
    with pytest.raises(ShapeError):
        ModelBundle(
            g=g,
            d=build(NetworkSpec(6, (), 3), "discriminator"),
            c=build(NetworkSpec(6, (), 4), "classifier"),
        )


def _fixed_bundle(logits_row):
    # Generator passes x through; heads emit x @ W with W mapping to the given row.
    g = Network(NetworkSpec(1, (), 1), "generator", [Layer(Tensor([[1.0]]), Tensor([0.0]), True)])
    k = len(logits_row)
    head = lambda role: Network(NetworkSpec(1, (), k), role, [Layer(Tensor([logits_row]), Tensor(np.zeros(k)), False)])
    return ModelBundle(g=g, d=head("discriminator"), c=head("classifier"))


def test_predict_labels_argmax():
    bundle = _fixed_bundle([0.0, 5.0, -1.0])
    assert predict_labels(bundle, np.array([[1.0]])).tolist() == [1]


def test_predict_labels_ties_go_low():
    bundle = _fixed_bundle([2.0, 2.0, 0.0])
    assert predict_labels(bundle, np.array([[1.0]]), "discriminator").tolist() == [0]


def test_predict_labels_unknown_or_missing_head():
    bundle = _fixed_bundle([0.0, 1.0])
    with pytest.raises(ValueError):
        predict_labels(bundle, np.array([[1.0]]), "domain")
    no_c = ModelBundle(g=bundle.g, d=bundle.d)
    with pytest.raises(ValueError):
        predict_labels(no_c, np.array([[1.0]]), "classifier")


@pytest.fixture(scope="module")
def pretrained_moons():
    src = make_two_moons(500, 0.1, seed=0)
    bundle = build_bundle(2, 2, ModelConfig(), "mmen", seed=0)
    pretrain(bundle, src, TrainConfig(pretrain_epochs=10, lr=5e-3, batch_source=32))
    return bundle, src


def test_pretrained_source_accuracy(pretrained_moons):
    bundle, src = pretrained_moons
    assert (predict_labels(bundle, src.features) == src.labels).mean() > 0.95


def test_heads_agree_after_pretraining(pretrained_moons):
    bundle, src = pretrained_moons
    c = predict_labels(bundle, src.features, "classifier")
    d = predict_labels(bundle, src.features, "discriminator")
    assert (c == d).mean() >= 0.99


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path, pretrained_moons):
    bundle, _ = pretrained_moons
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, bundle, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for name, net in bundle.networks().items():
        other = loaded.networks()[name]
        assert other.spec == net.spec and other.role == net.role
        assert param_bytes(other) == param_bytes(net)


def test_checkpoint_bytes_are_reproducible(tmp_path, pretrained_moons):
    bundle, _ = pretrained_moons
    save_checkpoint(tmp_path / "a", bundle)
    save_checkpoint(tmp_path / "b", bundle)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_without_classifier(tmp_path):
    g = build(NetworkSpec(2, (3,), 4, seed=1), "generator")
    d = build(NetworkSpec(4, (), 2, seed=2), "discriminator")
    save_checkpoint(tmp_path / "gd", ModelBundle(g=g, d=d))
    loaded, _ = load_checkpoint(tmp_path / "gd")
    assert loaded.c is None and loaded.default_head() == "discriminator"


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)


def test_checkpoint_rejects_truncation(tmp_path, pretrained_moons):
    bundle, _ = pretrained_moons
    path = tmp_path / "t"
    save_checkpoint(path, bundle)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
