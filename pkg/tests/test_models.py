import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradmatch.data import Dataset, make_gaussian_blobs
from gradmatch.errors import NonFiniteGradient
from gradmatch.models import (ModelState, forward_loss, init_model, last_layer_grads,
                              load_checkpoint, loss_and_grad, n_params, per_sample_last_layer_grad,
                              predict, save_checkpoint, sgd_step)


def test_zero_logreg_loss_is_log_c():
    d = make_gaussian_blobs(5, 3, 4, 2.0, 0)
    m = init_model("logreg", 4, 3)
    agg, per = forward_loss(m, d)
    assert np.allclose(per, math.log(3)) and math.isclose(agg, math.log(3))


def test_weighted_loss_normalization():
    d = make_gaussian_blobs(4, 2, 3, 2.0, 0)
    m = init_model("mlp", 3, 2, 5, seed=1)
    idx = np.arange(8)
    unweighted = forward_loss(m, d, idx)[0]
    assert math.isclose(forward_loss(m, d, idx, np.full(8, 3.0))[0], unweighted)
    single = forward_loss(m, d, [2], [5.0])
    assert math.isclose(single[0], single[1][0])


def test_last_layer_hand_example():
    m = ModelState("logreg", np.zeros(6), 2, 2)  # p = (0.5, 0.5)
    g = last_layer_grads(m, np.array([[1.0, 0.0]]), np.array([0]))[0]
    assert np.allclose(g, [-0.5, -0.5, 0.0, 0.5, 0.5, 0.0])


def test_last_layer_zero_when_prediction_exact():
    # huge logit margin: p equals the one-hot label to machine precision
    theta = np.array([800.0, 0, -800.0, 0]).astype(float)
    m = ModelState("logreg", theta, 1, 2)
    g = last_layer_grads(m, np.array([[0.0]]), np.array([0]))
    assert np.all(g == 0)


def test_per_sample_wrapper_matches_matrix():
    d = make_gaussian_blobs(3, 3, 2, 2.0, 0)
    m = init_model("mlp", 2, 3, 4, seed=2)
    rows = last_layer_grads(m, d.features, d.labels)
    one = per_sample_last_layer_grad(m, d, 4)
    assert np.array_equal(one.values, rows[4]) and one.owner_index == 4
    assert rows.shape[1] == 3 * (4 + 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), arch=st.sampled_from(["logreg", "mlp"]))
def test_gradient_matches_central_differences(seed, arch):
    rng = np.random.default_rng(seed)
    m = init_model(arch, 3, 3, 4, seed=seed)
    m = m.with_theta(m.theta + 0.5 * rng.standard_normal(m.theta.size))
    x, y = rng.standard_normal((2, 3)), rng.integers(0, 3, 2)
    w = rng.uniform(0.1, 2.0, 2)
    d = Dataset(x, y, 3)
    _, g = loss_and_grad(m, x, y, w)
    h = 1e-5
    for i in range(m.theta.size):
        e = np.zeros_like(m.theta)
        e[i] = h
        fd = (forward_loss(m.with_theta(m.theta + e), d, None, w)[0]
              - forward_loss(m.with_theta(m.theta - e), d, None, w)[0]) / (2 * h)
        assert abs(fd - g[i]) < 1e-5 * max(1.0, abs(fd))


def test_loss_nonnegative():
    d = make_gaussian_blobs(10, 4, 3, 3.0, 0)
    m = init_model("mlp", 3, 4, 6, seed=0)
    assert np.all(forward_loss(m, d)[1] >= 0)


def test_sgd_weight_decay_only():
    m = init_model("mlp", 2, 2, 3, seed=0)
    out = sgd_step(m, np.zeros_like(m.theta), 0.1)
    assert np.allclose(out.theta, m.theta * (1 - 0.1 * 5e-4))


def test_sgd_without_momentum():
    m = init_model("mlp", 2, 2, 3, seed=0)
    g = np.linspace(-1, 1, m.theta.size)
    out = sgd_step(m, g, 0.1, momentum=0.0)
    assert np.allclose(out.theta, m.theta - 0.1 * (g + 5e-4 * m.theta))


def test_sgd_momentum_two_steps():
    m = ModelState("logreg", np.zeros(4), 1, 2)
    g = np.ones(4)
    one = sgd_step(m, g, 0.1, weight_decay=0.0)
    two = sgd_step(one, g, 0.1, weight_decay=0.0)
    step2 = one.theta - two.theta
    assert np.allclose(step2, 0.1 * g + 0.9 * 0.1 * g)


def test_sgd_rejects_nonfinite():
    m = ModelState("logreg", np.zeros(4), 1, 2)
    with pytest.raises(NonFiniteGradient):
        sgd_step(m, np.array([0, np.nan, 0, 0]), 0.1)


def test_model_state_validation():
    with pytest.raises(ValueError):
        ModelState("logreg", np.zeros(5), 1, 2)
    with pytest.raises(ValueError):
        ModelState("logreg", np.array([np.inf, 0, 0, 0]), 1, 2)
    assert n_params("mlp", 3, 2, 4) == 4 * 4 + 2 * 5


def test_checkpoint_round_trip(tmp_path):
    m = init_model("mlp", 5, 3, 7, seed=4)
    m = m.with_theta(m.theta + 1e-3 * np.arange(m.theta.size))
    save_checkpoint(m, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json")
    assert np.array_equal(back.theta, m.theta) and back.hidden_width == 7
    d = make_gaussian_blobs(4, 3, 5, 2.0, 0)
    assert np.array_equal(predict(back, d.features), predict(m, d.features))
