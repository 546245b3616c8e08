from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobworld.autoencoder import AEConfig, autoencoder_spec
from lobworld.nn import (Adam, Network, NetworkSpec, TrainConfig, clip_global_norm, fit,
                         grad_check, load_checkpoint, mdn_nll, mse, save_checkpoint,
                         softmax, softmax_cross_entropy)
from lobworld.reward import RewardConfig, reward_spec

EPS = 1e-5
TOL = 1e-4

LAYER_CASES = {
    "dense": ((5,), [{"kind": "dense", "n_in": 5, "n_out": 3}]),
    "conv1d": ((8, 3), [{"kind": "conv1d", "c_in": 3, "c_out": 4, "kernel": 5}]),
    "downsample": ((8, 3), [{"kind": "conv1d", "c_in": 3, "c_out": 2, "kernel": 3},
                            {"kind": "downsample", "factor": 2}]),
    "upsample": ((4, 3), [{"kind": "conv1d", "c_in": 3, "c_out": 2, "kernel": 3},
                          {"kind": "upsample", "factor": 2}]),
    "reshape": ((4, 3), [{"kind": "reshape", "shape": [12]},
                         {"kind": "dense", "n_in": 12, "n_out": 2}]),
    "lstm_last": ((6, 3), [{"kind": "lstm", "n_in": 3, "n_hidden": 4}]),
    "lstm_seq": ((6, 3), [{"kind": "lstm", "n_in": 3, "n_hidden": 4,
                           "return_sequences": True}]),
}
for fn in ("relu", "tanh", "sigmoid", "exp", "softmax", "identity"):
    LAYER_CASES[f"act_{fn}"] = ((5,), [{"kind": "dense", "n_in": 5, "n_out": 4},
                                       {"kind": "activation", "fn": fn}])


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradients(name):
    shape, layers = LAYER_CASES[name]
    net = Network(NetworkSpec(shape, layers, seed=1))
    x = np.random.default_rng(2).standard_normal((3,) + shape)
    assert grad_check(net, x, EPS, check_input=True) < TOL


def test_autoencoder_graph_gradient():
    cfg = AEConfig(window=8, n_features=4, latent_dim=3, channels=(3, 3), kernel=3, seed=4)
    spec, _ = autoencoder_spec(cfg)
    net = Network(spec)
    x = np.random.default_rng(0).random((2, 8, 4))
    assert grad_check(net, x, EPS, loss=lambda out: mse(out, x)) < TOL


def test_mdn_nll_graph_gradient():
    K, m = 3, 2
    spec = NetworkSpec((4, 5), (
        {"kind": "lstm", "n_in": 5, "n_hidden": 6, "return_sequences": True},
        {"kind": "dense", "n_in": 6, "n_out": K * (2 * m + 1)}), seed=3)
    net = Network(spec)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5))
    y = rng.standard_normal((2, 4, m))
    assert grad_check(net, x, EPS, loss=lambda out: mdn_nll(out, y, K, m)) < TOL


def test_reward_graph_gradient():
    net = Network(reward_spec(RewardConfig(latent_dim=3, lstm_units=4, dense_units=5, seed=2)))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 2, 3))
    y = rng.standard_normal((4, 1))
    assert grad_check(net, x, EPS, loss=lambda out: mse(out, y)) < TOL


def _numeric_grad(f, x, eps=EPS):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        fp = f(x)
        flat[i] = o - eps
        fm = f(x)
        flat[i] = o
        gf[i] = (fp - fm) / (2 * eps)
    return g


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    p, t = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    np.testing.assert_allclose(mse(p, t)[1], _numeric_grad(lambda z: mse(z, t)[0], p), atol=1e-8)
    labels = np.array([0, 2, 1, 2])
    np.testing.assert_allclose(softmax_cross_entropy(p, labels)[1],
                               _numeric_grad(lambda z: softmax_cross_entropy(z, labels)[0], p),
                               atol=1e-8)
    raw, y = rng.standard_normal((5, 2 * (2 * 2 + 1))), rng.standard_normal((5, 2))
    np.testing.assert_allclose(mdn_nll(raw, y, 2, 2)[1],
                               _numeric_grad(lambda z: mdn_nll(z, y, 2, 2)[0], raw), atol=1e-8)


def test_mdn_nll_single_component_matches_gaussian():
    from scipy.stats import norm
    mu, logv, y = 0.3, np.log(0.5), 1.1
    raw = np.array([[0.0, mu, logv]])
    assert mdn_nll(raw, np.array([[y]]), 1, 1)[0] == pytest.approx(-norm.logpdf(y, mu, np.sqrt(0.5)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_is_a_distribution(vals):
    p = softmax(np.array(vals))
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= 0)


def test_clip_global_norm():
    g = [np.array([3.0, 0.0]), np.array([[4.0]])]
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    assert np.sqrt(sum((x ** 2).sum() for x in g)) == pytest.approx(1.0)
    h = [np.array([0.3])]
    clip_global_norm(h, 1.0)
    assert h[0][0] == 0.3


def test_init_is_uniform_fan_in_and_forget_bias():
    net = Network(NetworkSpec((10,), [{"kind": "dense", "n_in": 10, "n_out": 200}], seed=0))
    W = net.layers[0].params["W"]
    assert np.abs(W).max() <= 1 / np.sqrt(10)
    lstm = Network(NetworkSpec((2, 3), [{"kind": "lstm", "n_in": 3, "n_hidden": 4}], seed=0))
    b = lstm.layers[0].params["b"]
    bound = 1 / np.sqrt(4)
    assert np.all(np.abs(b[4:8] - 1.0) <= bound)    # forget gate shifted by +1
    assert np.all(np.abs(np.delete(b, np.s_[4:8])) <= bound)


def test_adam_minimises_quadratic():
    x = np.array([5.0, -3.0])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.step([2 * x])
    assert np.abs(x).max() < 1e-2


def test_checkpoint_round_trip(tmp_path):
    net = Network(NetworkSpec((3,), [{"kind": "dense", "n_in": 3, "n_out": 2}], seed=5))
    save_checkpoint(tmp_path / "c.json", {"a": net}, {"note": 1})
    nets, extra = load_checkpoint(tmp_path / "c.json")
    x = np.ones((1, 3))
    np.testing.assert_array_equal(nets["a"].forward(x), net.forward(x))
    assert extra["note"] == 1
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "c.json").read_bytes()


def test_fit_linear_regression_and_early_stop():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 3))
    Y = X @ np.array([[1.0], [-2.0], [0.5]])
    net = Network(NetworkSpec((3,), [{"kind": "dense", "n_in": 3, "n_out": 1}], seed=0))
    res = fit(net, X, Y, "mse", TrainConfig(lr=0.05, epochs=200, patience=3, seed=0), X, Y)
    assert res.val_loss[-1] < 1e-3 * res.initial_val
    assert min(res.val_loss) == res.best_val[-1]
    np.testing.assert_allclose(net.layers[0].params["W"][:, 0], [1, -2, 0.5], atol=0.05)


def test_fit_is_deterministic():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((50, 2)), rng.standard_normal((50, 1))

    def run():
        net = Network(NetworkSpec((2,), [{"kind": "dense", "n_in": 2, "n_out": 1}], seed=1))
        fit(net, X, Y, "mse", TrainConfig(epochs=3, seed=7))
        return net.layers[0].params["W"].copy()

    np.testing.assert_array_equal(run(), run())
