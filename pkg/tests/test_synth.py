"""Conditional tabular GAN: encoding, networks, Adam, training, sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodnow.dataset import Feature, FeatureSchema, IngestError, TabularDataset
from floodnow.fixtures import make_gaussian_mixture
from floodnow.synth import (
    AdamState,
    EncodingLayout,
    NetworkParams,
    SynthConfig,
    SynthesizerModel,
    adam_step,
    class_counts,
    decode,
    encode,
    fit,
    generator_forward,
    gradient_check,
    sample,
)
from floodnow.synth.network import backward, forward
from oracles import central_difference


def tiny_config(**kw):
    base = dict(latent_dim=4, hidden_dims=[8], batch_size=32, max_epochs=20, checkpoint_every=10, seed=0)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="module")
def mixture():
    return make_gaussian_mixture(n_rows=120, n_numeric=2, n_categorical=1, seed=4)


def mixed_schema():
    return FeatureSchema((Feature("a"), Feature("b"), Feature("c", "categorical", ("x", "y", "z"))))


# -- encoding -------------------------------------------------------------


def test_encoding_width_and_blocks():
    ds = TabularDataset(mixed_schema(), [[0.1, 0.9, 2], [0.5, 0.0, 0]])
    enc = encode(ds)
    assert enc.shape == (2, 5)
    np.testing.assert_array_equal(enc[:, 2:].sum(axis=1), [1, 1])
    back = decode(enc, EncodingLayout(ds.schema))
    np.testing.assert_array_equal(back.X, ds.X)


def test_encoding_rejects_unnormalized_numeric():
    with pytest.raises(IngestError, match="normalized"):
        encode(TabularDataset(mixed_schema(), [[1.5, 0.0, 0]]))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_encode_decode_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.uniform(size=(n, 2)), rng.integers(0, 3, n)]
    ds = TabularDataset(mixed_schema(), X)
    np.testing.assert_array_equal(decode(encode(ds), EncodingLayout(ds.schema)).X, X)


# -- networks -------------------------------------------------------------


def test_zero_generator_outputs_midpoint_and_uniform_blocks():
    layout = EncodingLayout(mixed_schema())
    gen = NetworkParams.init([4 + 3, 8, layout.width], "relu", np.random.default_rng(0))
    for W, b in zip(gen.weights, gen.biases):
        W[:] = 0
        b[:] = 0
    z = np.random.default_rng(1).normal(size=(10, 4))
    out = generator_forward(gen, z, np.eye(3)[np.arange(10) % 3], layout, tau=0.2)
    np.testing.assert_array_equal(out[:, :2], 0.5)
    np.testing.assert_allclose(out[:, 2:], 1 / 3, atol=1e-15)


def test_generator_numeric_range_and_purity():
    layout = EncodingLayout(mixed_schema())
    rng = np.random.default_rng(2)
    gen = NetworkParams.init([4 + 3, 16, layout.width], "relu", rng)
    z = rng.normal(size=(1000, 4)) * 5
    cond = np.eye(3)[rng.integers(0, 3, 1000)]
    out = generator_forward(gen, z, cond, layout)
    assert np.all((out[:, :2] > 0) & (out[:, :2] < 1))
    np.testing.assert_array_equal(out, generator_forward(gen, z, cond, layout))


@pytest.mark.parametrize("activation", ["relu", "leaky_relu"])
def test_backprop_matches_finite_differences(activation):
    rng = np.random.default_rng(3)
    net = NetworkParams.init([5, 7, 6, 2], activation, rng)
    x = rng.normal(size=(9, 5))
    target = rng.normal(size=(9, 2))

    def loss_of(arrs):
        probe = NetworkParams([arrs[0], arrs[2], arrs[4]], [arrs[1], arrs[3], arrs[5]], activation)
        out, _ = forward(probe, x)
        return 0.5 * np.sum((out - target) ** 2)

    out, cache = forward(net, x)
    grads, dx = backward(net, cache, out - target)
    arrs = [a.copy() for a in net.arrays]
    for i, g in enumerate(grads):
        def f(p, i=i):
            trial = list(arrs)
            trial[i] = p
            return loss_of(trial)
        num = central_difference(f, arrs[i], h=1e-6)
        assert np.max(np.abs(g - num)) <= 1e-6 * max(1.0, np.max(np.abs(num)))
    num_x = central_difference(lambda xx: 0.5 * np.sum((forward(net, xx)[0] - target) ** 2), x)
    np.testing.assert_allclose(dx, num_x, atol=1e-6)


@pytest.mark.parametrize("hidden", [[8], []])
def test_gradient_check_both_losses(mixture, hidden):
    chk = gradient_check(tiny_config(hidden_dims=hidden), mixture)
    assert chk.discriminator < 1e-4
    assert chk.generator < 1e-4


# -- Adam -----------------------------------------------------------------


def test_adam_first_step():
    p = [np.array([0.0])]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.array([1.0])], state, lr=1e-3, beta1=0.5, beta2=0.9, eps=1e-8)
    # m_hat = 1, v_hat = 1: step = lr / (1 + eps)
    assert p[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_zero_gradient_and_symmetry():
    p = [np.array([0.3, 0.3]), np.array([[1.0]])]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.array([0.5, 0.5]), np.zeros((1, 1))], state, lr=0.01)
    assert p[0][0] == p[0][1]
    assert p[1][0, 0] == 1.0 and state.step == 1


def test_adam_non_finite_gradient_names_layer():
    p = [np.zeros(2)]
    with pytest.raises(FloatingPointError, match="layer0.weight"):
        adam_step(p, [np.array([np.nan, 0.0])], AdamState.zeros_like(p), 0.1, names=["layer0.weight"])


# -- config ---------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(max_epochs=10, checkpoint_every=20)
    with pytest.raises(ValueError):
        SynthConfig(gen_lr=0.0)
    cfg = SynthConfig(gen_lr=1e-4, disc_lr=1e-4, max_epochs=850, checkpoint_every=50)
    assert (cfg.gen_lr, cfg.disc_lr, cfg.max_epochs) == (1e-4, 1e-4, 850)


# -- training -------------------------------------------------------------


def test_fit_checkpoints_every_fifty_epochs(mixture):
    cfg = tiny_config(max_epochs=1000, checkpoint_every=50, batch_size=128)
    model = fit(mixture, config=cfg)
    assert sorted(model.checkpoints) == list(range(50, 1001, 50))
    assert len(model.checkpoints) == 20
    assert len(model.log) == 1000 and model.epoch == 1000
    assert model.checkpoints[50].epoch == 50 and len(model.checkpoints[50].log) == 50


def test_fit_deterministic_and_writes_checkpoints(mixture, tmp_path):
    cfg = tiny_config()
    a = fit(mixture, config=cfg, checkpoint_dir=tmp_path / "ck")
    b = fit(mixture, config=cfg)
    assert a.log.gen_loss == b.log.gen_loss and a.log.disc_loss == b.log.disc_loss
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["synth_epoch_0010.json", "synth_epoch_0020.json"]
    s1 = sample(a, 50, (0.6, 0.2, 0.2), seed=3)
    s2 = sample(b, 50, (0.6, 0.2, 0.2), seed=3)
    np.testing.assert_array_equal(s1.X, s2.X)


def test_fit_rejects_empty_class(mixture):
    ds = TabularDataset(mixture.schema, mixture.X, np.where(mixture.labels == 2, 0, mixture.labels), 3)
    with pytest.raises(ValueError, match=r"\[2\]"):
        fit(ds, config=tiny_config())


def test_loss_log_csv(mixture, tmp_path):
    model = fit(mixture, config=tiny_config(max_epochs=60, checkpoint_every=60))
    model.log.write_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,gen_loss,disc_loss,gen_loss_ma50,disc_loss_ma50"
    assert len(lines) == 61
    assert lines[49].split(",")[3] == "" and lines[50].split(",")[3] != ""
    ma = float(lines[50].split(",")[3])
    assert ma == pytest.approx(np.mean(model.log.gen_loss[:50]), rel=1e-12)


def test_model_file_round_trip(mixture, tmp_path):
    model = fit(mixture, config=tiny_config())
    model.save(tmp_path / "s.json")
    back = SynthesizerModel.load(tmp_path / "s.json")
    np.testing.assert_array_equal(sample(back, 40, (0.5, 0.25, 0.25), 1).X, sample(model, 40, (0.5, 0.25, 0.25), 1).X)


# -- sampling -------------------------------------------------------------


def test_class_counts_examples():
    np.testing.assert_array_equal(class_counts(50000, (0.6, 0.2, 0.2)), [30000, 10000, 10000])
    np.testing.assert_array_equal(class_counts(1, (1.0, 0.0, 0.0)), [1, 0, 0])
    with pytest.raises(ValueError):
        class_counts(10, (1.2, -0.2, 0.0))


@settings(max_examples=200)
@given(st.integers(1, 100000), st.lists(st.integers(0, 50), min_size=2, max_size=5))
def test_class_counts_largest_remainder(n, weights):
    if sum(weights) == 0:
        return
    r = np.array(weights, dtype=float) / sum(weights)
    c = class_counts(n, r)
    assert c.sum() == n
    assert np.all(np.abs(c - n * r) < 1.0)


@pytest.fixture(scope="module")
def trained(mixture):
    return fit(mixture, config=tiny_config())


@settings(max_examples=25)
@given(st.integers(1, 400), st.integers(0, 10**6))
def test_sample_counts_and_ranges(trained, n, seed):
    rng = np.random.default_rng(seed)
    ratios = rng.dirichlet(np.ones(3))
    out = sample(trained, n, ratios, seed)
    np.testing.assert_array_equal(np.bincount(out.labels, minlength=3), class_counts(n, ratios))
    num = out.X[:, :2]
    assert np.all((num > 0) & (num < 1))
    assert set(np.unique(out.X[:, 2])) <= {0.0, 1.0, 2.0}


def test_sample_large_pool_counts(trained):
    out = sample(trained, 5000, (0.6, 0.2, 0.2), seed=0)
    np.testing.assert_array_equal(out.class_counts(), [3000, 1000, 1000])
