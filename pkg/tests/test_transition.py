from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from lobworld.data import empty_context
from lobworld.nn import TrainConfig
from lobworld.transition import (CONTEXT_EMBED_DIM, MixtureParams, TransitionConfig,
                                 TransitionModel, embed_context, log_likelihood,
                                 make_sequences, sample, step_inputs, train_mdn)


def mixture_density(params: MixtureParams, pts: np.ndarray) -> np.ndarray:
    """Independent oracle built from scipy's multivariate normal."""
    return sum(w * multivariate_normal(mu, np.diag(v)).pdf(pts)
               for w, mu, v in zip(params.weights, params.means, params.variances))


def test_params_validation():
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.5], [[0.0], [1.0]], [[1.0], [0.0]])
    p = MixtureParams([0.25, 0.75], [0.0, 2.0], [1.0, 1.0])
    assert p.dim == 1 and p.n_components == 2
    assert p.mean()[0] == pytest.approx(1.5)


def test_log_likelihood_matches_scipy():
    rng = np.random.default_rng(0)
    p = MixtureParams([0.2, 0.3, 0.5], rng.standard_normal((3, 2)), rng.uniform(0.1, 2, (3, 2)))
    for z in rng.standard_normal((5, 2)):
        assert log_likelihood(p, z) == pytest.approx(np.log(mixture_density(p, z)), rel=1e-10)


def test_log_likelihood_far_point_is_finite():
    p = MixtureParams([1.0], [[0.0]], [[1e-4]])
    assert np.isfinite(log_likelihood(p, [50.0]))


def test_sample_moments_and_temperature():
    rng = np.random.default_rng(1)
    p = MixtureParams([0.3, 0.7], [[-2.0], [1.0]], [[0.25], [0.5]])
    draws = np.array([sample(p, 1.0, rng) for _ in range(20000)])
    assert draws.mean() == pytest.approx(p.mean()[0], abs=0.03)
    second = (p.weights * (p.variances[:, 0] + p.means[:, 0] ** 2)).sum()
    assert draws.var() == pytest.approx(second - p.mean()[0] ** 2, rel=0.05)
    cold = np.array([sample(p, 1e-6, rng) for _ in range(50)])
    np.testing.assert_allclose(cold, 1.0, atol=1e-2)
    with pytest.raises(ValueError):
        sample(p, 0.0, rng)


def test_temperature_sharpens_weights():
    rng = np.random.default_rng(2)
    p = MixtureParams([0.2, 0.8], [[-10.0], [10.0]], [[1e-6], [1e-6]])
    draws = np.array([sample(p, 0.5, rng) for _ in range(20000)])[:, 0]
    expected = 0.2 ** 2 / (0.2 ** 2 + 0.8 ** 2)
    assert np.mean(draws < 0) == pytest.approx(expected, abs=0.01)


def test_step_inputs_layout():
    z = np.arange(16.0)
    u = np.ones(CONTEXT_EMBED_DIM)
    row = step_inputs(z, -300, u)
    assert row.shape == (25,)
    assert row[16] == pytest.approx(-0.3)
    np.testing.assert_array_equal(row[17:], u)
    np.testing.assert_array_equal(embed_context(empty_context()), np.zeros(CONTEXT_EMBED_DIM))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_forward_is_a_valid_mixture(seed, scale):
    cfg = TransitionConfig(latent_dim=3, n_components=4, hidden=8, seq_len=3, seed=seed % 7)
    model = TransitionModel(cfg)
    h = np.random.default_rng(seed).standard_normal((16, 3, cfg.input_dim)) * scale
    w, mu, var = model.predict_arrays(h)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(var > 0)


def test_predict_accepts_tuples_and_checks_length():
    cfg = TransitionConfig(latent_dim=2, n_components=2, hidden=4, seq_len=2)
    model = TransitionModel(cfg)
    u = np.zeros(CONTEXT_EMBED_DIM)
    p = model.predict([(np.zeros(2), 100, u), (np.ones(2), -100, u)])
    assert p.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        model.predict([(np.zeros(2), 100, u)])


def test_density_integrates_to_one():
    cfg = TransitionConfig(latent_dim=2, n_components=3, hidden=6, seq_len=2, seed=5)
    p = TransitionModel(cfg).predict(np.random.default_rng(0).standard_normal((2, 11)))
    sd = np.sqrt(p.variances.max())
    lo, hi = p.means.min(0) - 8 * sd, p.means.max(0) + 8 * sd
    pts = np.random.default_rng(1).uniform(lo, hi, size=(400_000, 2))
    dens = mixture_density(p, pts)
    vol = np.prod(hi - lo)
    assert dens.mean() * vol == pytest.approx(1.0, rel=0.02)
    assert np.exp(log_likelihood(p, pts[0])) == pytest.approx(dens[0], rel=1e-9)


def two_component_problem(n=3000, seed=0):
    """Zero inputs; targets drawn from 0.3 N(-1.5, 0.2^2) + 0.7 N(1.5, 0.3^2)."""
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < 0.3
    y = np.where(comp, rng.normal(-1.5, 0.2, n), rng.normal(1.5, 0.3, n))
    cfg = TransitionConfig(latent_dim=1, n_components=2, hidden=8, seq_len=1, seed=seed)
    X = np.zeros((n, 1, cfg.input_dim))
    return cfg, X, y.reshape(n, 1, 1)


def recover_two_components(seed=0) -> MixtureParams:
    cfg, X, Y = two_component_problem(seed=seed)
    model, _ = train_mdn(X, Y, cfg, TrainConfig(lr=1e-2, batch_size=100, epochs=60, patience=60,
                                                seed=seed))
    return model.predict(X[0])


def test_known_mixture_is_recovered():
    p = recover_two_components()
    order = np.argsort(p.means[:, 0])
    np.testing.assert_allclose(p.weights[order], [0.3, 0.7], atol=0.1)
    np.testing.assert_allclose(p.means[order, 0], [-1.5, 1.5], atol=0.1)


def test_checkpoint_round_trip(tmp_path):
    cfg = TransitionConfig(latent_dim=2, n_components=2, hidden=4, seq_len=3, seed=1)
    m = TransitionModel(cfg)
    m.save(tmp_path / "t.json")
    back = TransitionModel.load(tmp_path / "t.json")
    h = np.random.default_rng(0).standard_normal((2, 3, cfg.input_dim))
    np.testing.assert_array_equal(back.raw(h), m.raw(h))
    assert back.cfg == cfg


def test_make_sequences():
    x, y = np.arange(10.0)[:, None], np.arange(10.0)[:, None] + 1
    xs, ys = make_sequences(x, y, 4)
    assert xs.shape == (7, 4, 1)
    np.testing.assert_array_equal(ys[2, :, 0], [3, 4, 5, 6])
    assert make_sequences(x[:2], y[:2], 4)[0].shape[0] == 0
