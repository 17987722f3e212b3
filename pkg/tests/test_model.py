import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphafair.model import (
    Layout,
    Model,
    ModelError,
    apply_step,
    forward_losses,
    init_model,
    load_model,
    model_from_dict,
    model_to_dict,
    per_sample_gradients,
    predict_proba,
    save_model,
    weighted_gradient,
)


def _random(rng, d=3, c=3, hidden=0, n=10, scale=0.7):
    lay = Layout(d, c, hidden)
    model = Model(rng.normal(0.0, scale, size=lay.n_params), lay)
    return model, rng.normal(size=(n, d)), rng.integers(0, c, size=n)


def _oracle_losses(model, x, y):
    """Independent loop-based softmax cross-entropy."""
    lay = model.layout
    p = model.params
    out = []
    for xi, yi in zip(x, y):
        if lay.hidden == 0:
            w = p[: lay.n_features * lay.n_classes].reshape(lay.n_features, lay.n_classes)
            b = p[lay.n_features * lay.n_classes :]
            z = [sum(xi[j] * w[j, c] for j in range(lay.n_features)) + b[c] for c in range(lay.n_classes)]
        else:
            d, h, c_ = lay.n_features, lay.hidden, lay.n_classes
            w1 = p[: d * h].reshape(d, h)
            b1 = p[d * h : d * h + h]
            w2 = p[d * h + h : d * h + h + h * c_].reshape(h, c_)
            b2 = p[d * h + h + h * c_ :]
            hid = [max(0.0, sum(xi[j] * w1[j, k] for j in range(d)) + b1[k]) for k in range(h)]
            z = [sum(hid[k] * w2[k, c] for k in range(h)) + b2[c] for c in range(c_)]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        out.append(min(lse - z[yi], -math.log(1e-12)))
    return np.array(out)


def _fd(model, x, y, h=1e-5):
    base = np.array(model.params)
    g = np.empty((len(y), len(base)))
    for j in range(len(base)):
        up, dn = base.copy(), base.copy()
        up[j] += h
        dn[j] -= h
        g[:, j] = (forward_losses(Model(up, model.layout), x, y) - forward_losses(Model(dn, model.layout), x, y)) / (2 * h)
    return g


def test_param_counts():
    assert Layout(5, 3).n_params == 5 * 3 + 3
    assert Layout(5, 3, 4).n_params == 5 * 4 + 4 + 4 * 3 + 3


def test_uniform_logits_give_log_c():
    lay = Layout(4, 5)
    model = Model(np.zeros(lay.n_params), lay)
    losses = forward_losses(model, np.ones((3, 4)), [0, 2, 4])
    np.testing.assert_allclose(losses, math.log(5), rtol=0, atol=1e-15)


def test_confident_true_class_loss_goes_to_zero():
    lay = Layout(1, 2)
    losses = [forward_losses(Model(np.array([-s, s, 0.0, 0.0]), lay), [[1.0]], [1])[0] for s in (1, 5, 20)]
    assert losses[0] > losses[1] > losses[2] >= 0 and losses[2] < 1e-15


def test_log_clamp_keeps_losses_finite():
    lay = Layout(1, 2)
    model = Model(np.array([1e4, -1e4, 0.0, 0.0]), lay)
    loss = forward_losses(model, [[1.0]], [1])[0]
    assert loss == pytest.approx(-math.log(1e-12))


@pytest.mark.parametrize("hidden", [0, 4])
def test_losses_match_independent_oracle(hidden):
    rng = np.random.default_rng(hidden)
    model, x, y = _random(rng, hidden=hidden)
    np.testing.assert_allclose(forward_losses(model, x, y), _oracle_losses(model, x, y), rtol=0, atol=1e-10)


@pytest.mark.parametrize("hidden", [0, 3])
def test_gradients_match_finite_differences(hidden):
    rng = np.random.default_rng(10 + hidden)
    model, x, y = _random(rng, hidden=hidden, n=6)
    g, fd = per_sample_gradients(model, x, y), _fd(model, x, y)
    rel = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-8)
    assert rel.max() <= 1e-4


def test_linear_gradient_block_formula():
    rng = np.random.default_rng(3)
    model, x, y = _random(rng, d=2, c=3, n=4)
    p = predict_proba(model, x)
    g = per_sample_gradients(model, x, y)
    for i in range(4):
        r = p[i] - np.eye(3)[y[i]]
        np.testing.assert_allclose(g[i, :6], np.outer(x[i], r).ravel(), atol=1e-15)
        np.testing.assert_allclose(g[i, 6:], r, atol=1e-15)


@pytest.mark.parametrize("hidden", [0, 5])
def test_row_mean_is_batch_gradient(hidden):
    rng = np.random.default_rng(20 + hidden)
    model, x, y = _random(rng, hidden=hidden, n=30)
    np.testing.assert_allclose(per_sample_gradients(model, x, y).mean(axis=0), weighted_gradient(model, x, y), atol=1e-10)


def test_weighted_gradient_matches_rows():
    rng = np.random.default_rng(4)
    model, x, y = _random(rng, hidden=3, n=12)
    w = rng.dirichlet(np.ones(12))
    np.testing.assert_allclose(w @ per_sample_gradients(model, x, y), weighted_gradient(model, x, y, w), atol=1e-12)


def test_identical_samples_identical_rows():
    rng = np.random.default_rng(5)
    model, x, y = _random(rng, hidden=2, n=3)
    x[2], y[2] = x[0], y[0]
    g = per_sample_gradients(model, x, y)
    assert g[0].tobytes() == g[2].tobytes()


def test_last_slice_columns():
    rng = np.random.default_rng(6)
    model, x, y = _random(rng, d=3, c=2, hidden=4, n=5)
    full = per_sample_gradients(model, x, y)
    last = per_sample_gradients(model, x, y, which="last")
    np.testing.assert_array_equal(last, full[:, model.layout.param_slice("last")])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 4))
def test_softmax_is_a_distribution(seed, hidden):
    rng = np.random.default_rng(seed)
    model, x, _ = _random(rng, hidden=hidden, scale=3.0)
    p = predict_proba(model, x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_dead_relu_decouples_loss_and_gradient_rank(dead_unit_mlp):
    model, x, y = dead_unit_mlp
    losses = forward_losses(model, x[:5], y[:5])
    norms = np.linalg.norm(per_sample_gradients(model, x[:5], y[:5]), axis=1)
    dead = 0
    assert losses[dead] > np.median(losses)
    assert norms[dead] < np.median(norms)


def test_apply_step():
    rng = np.random.default_rng(7)
    model, x, y = _random(rng, n=50)
    assert apply_step(model, np.zeros_like(model.params), 0.1).params.tobytes() == model.params.tobytes()
    assert not apply_step(model, model.params, 1.0).params.any()
    before = forward_losses(model, x, y).mean()
    after = forward_losses(apply_step(model, weighted_gradient(model, x, y), 1e-3), x, y).mean()
    assert after < before


def test_apply_step_errors():
    model = Model(np.zeros(4), Layout(1, 2))
    with pytest.raises(ModelError):
        apply_step(model, [np.nan, 0, 0, 0], 0.1)
    with pytest.raises(ModelError):
        apply_step(model, [0, 0, 0], 0.1)
    with pytest.raises(ModelError):
        apply_step(model, [0, 0, 0, 0], 0.0)


def test_dimension_mismatch():
    model = Model(np.zeros(Layout(3, 2).n_params), Layout(3, 2))
    with pytest.raises(ModelError, match="feature width"):
        forward_losses(model, np.zeros((2, 4)), [0, 1])
    with pytest.raises(ModelError):
        per_sample_gradients(model, np.zeros((2, 3)), [0, 2])


def test_model_rejects_bad_params():
    with pytest.raises(ModelError):
        Model(np.zeros(3), Layout(1, 2))
    with pytest.raises(ModelError):
        Model(np.array([np.inf, 0, 0, 0]), Layout(1, 2))


def test_init_is_seeded_and_scaled():
    lay = Layout(4, 3, 6)
    a = init_model(lay, np.random.default_rng(1))
    b = init_model(lay, np.random.default_rng(1))
    assert a.params.tobytes() == b.params.tobytes()
    assert not init_model(lay, np.random.default_rng(1), scale=0.0).params.any()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model, _, _ = _random(rng, hidden=3)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.layout == model.layout and back.params.tobytes() == model.params.tobytes()
    data = json.loads((tmp_path / "m.json").read_text())
    data["extra"] = {"ignored": True}
    assert model_from_dict(data).params.tobytes() == model.params.tobytes()
    assert model_to_dict(back) == model_to_dict(model)
