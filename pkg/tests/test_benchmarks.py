from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobworld.benchmarks import (ALL_QUANTITIES, ClassificationReport, ClassifierConfig,
                                 MovementClassifier, StrategyEnvelope, bfs_optimal,
                                 classify_move, greedy_optimal, momentum_policy, momentum_signal,
                                 movement_labels, step_rewards, train_classifier)
from lobworld.data import LobWindow
from lobworld.nn import TrainConfig


def brute_force(mm, quantities, po_max=1000, fee=0.02, po0=0):
    """Enumerate every action sequence with plain Python arithmetic."""
    best = -np.inf
    deltas = np.diff(mm)
    for seq in itertools.product(quantities, repeat=len(deltas)):
        po, total = po0, 0.0
        for q, d in zip(seq, deltas):
            new = min(po + q, po_max) if q > 0 else max(po + q, -po_max) if q < 0 else po
            total += new * d - fee * abs(new - po) * abs(d)
            po = new
        best = max(best, total)
    return best


def random_instance(rng, monotone=False):
    h = int(rng.integers(1, 7))
    k = int(rng.integers(1, 6))
    qs = sorted(rng.choice(ALL_QUANTITIES, size=k, replace=False).tolist())
    steps = rng.normal(0, 0.05, h)
    if monotone:
        trend = 1 if rng.random() < 0.5 else -1
        steps = np.abs(steps) * trend
        # greedy is only exact when it can follow the trend or stand aside
        if all(q * trend < 0 for q in qs):
            qs = sorted([-qs[0]] + qs[1:])
    return np.concatenate([[100.0], 100.0 + np.cumsum(steps)]), qs


def test_classify_move_thresholds():
    assert classify_move(0.02, 0.01).label == "up"
    assert classify_move(-0.02, 0.01).label == "down"
    assert classify_move(0.01, 0.01).label == "no_change"
    np.testing.assert_array_equal(movement_labels([-1, 0, 1], 0.5), [0, 1, 2])


def test_momentum_signal_and_policy():
    w = LobWindow(np.arange(3), np.zeros((3, 2)), np.array([10.0, 9.0, 10.05]))
    sig = momentum_signal(w, 0.01)
    assert sig.label == "up"
    assert momentum_policy(sig, 300) == 300
    assert momentum_policy(classify_move(-1.0), 300) == -300
    assert momentum_policy(classify_move(0.0), 300) == 0
    with pytest.raises(ValueError):
        momentum_policy(sig, 250)


def test_bfs_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        mm, qs = random_instance(rng)
        assert bfs_optimal(mm, qs) == pytest.approx(brute_force(mm, qs), abs=1e-9)


def test_bfs_rejects_long_horizon():
    with pytest.raises(ValueError):
        bfs_optimal(np.arange(9.0), [0, 100])


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_greedy_never_beats_bfs(seed, monotone):
    mm, qs = random_instance(np.random.default_rng(seed), monotone)
    g = greedy_optimal(mm, qs).pnl
    b = bfs_optimal(mm, qs)
    assert g <= b + 1e-9
    if monotone:
        assert g == pytest.approx(b, abs=1e-9)


def test_greedy_can_lose_to_bfs_when_only_trading_against_the_trend():
    # falling prices, buys only: reaching the cap early saves later fees
    mm = 100 + np.cumsum([0, -0.0174, -0.0165, -0.0010, -0.0663])
    qs = [300, 600, 800]
    g, b = greedy_optimal(mm, qs).pnl, bfs_optimal(mm, qs)
    assert b == pytest.approx(brute_force(mm, qs), abs=1e-9)
    assert g < b - 1e-3


def test_greedy_closed_form_on_rising_series():
    mm = 100.0 + 0.03 * np.arange(8)
    tr = greedy_optimal(mm, fee_rate=0.02)
    assert tr.quantities[0] == 1000 and np.all(tr.quantities[1:] == 0)
    assert tr.pnl == pytest.approx(1000 * (mm[-1] - mm[0]) - 0.02 * 1000 * 0.03)
    np.testing.assert_array_equal(tr.positions, 1000)


def test_greedy_tie_break_prefers_small_then_sell():
    tr = greedy_optimal(np.array([1.0, 1.0, 1.0]), [-300, 300, 0, 100, -100])
    np.testing.assert_array_equal(tr.quantities, [0, 0])
    tr = greedy_optimal(np.array([1.0, 1.0]), [-300, 300])
    assert tr.quantities[0] == -300


def test_step_rewards_fee():
    r, po, fee = step_rewards(0, np.array([500, -500]), 0.1, 1000, 0.02)
    np.testing.assert_allclose(r, [50 - 1, -50 - 1])
    np.testing.assert_allclose(fee, [1, 1])


def test_envelope_contains_variants():
    curves = np.array([[0, 1, 2.0], [0, -1, 3.0], [0, 0.5, 2.5]])
    env = StrategyEnvelope([100, 200, 300], curves)
    for c in curves:
        assert env.contains(c)
    assert not env.contains([0, 2, 2.0])
    np.testing.assert_array_equal(env.lower, [0, -1, 2])
    assert env.to_rows()[1] == [1, repr(-1.0), repr(1.0)]


def test_classification_report_against_manual_counts():
    y = np.array([0, 0, 1, 2, 2, 2])
    p = np.array([0, 2, 1, 2, 2, 0])
    rep = ClassificationReport.from_predictions(y, p)
    assert rep.precision == pytest.approx([0.5, 1.0, 2 / 3])
    assert rep.recall == pytest.approx([0.5, 1.0, 2 / 3])
    assert rep.support == [2, 1, 3]
    assert rep.accuracy == pytest.approx(4 / 6)
    assert rep.dominant_class == "up"
    assert "precision" in rep.to_table()


def test_classifier_learns_separable_windows(tmp_path):
    rng = np.random.default_rng(0)
    n = 300
    labels = rng.integers(3, size=n)
    X = rng.uniform(0, 0.1, (n, 8, 2))
    X[:, :, 0] += 0.4 * labels[:, None]     # class encoded in the level of channel 0
    cfg = ClassifierConfig(window=8, n_features=2, channels=(4,), kernel=3, dense=8, seed=0)
    clf, rep, _ = train_classifier(X[:200], labels[:200], cfg,
                                   TrainConfig(lr=1e-2, epochs=30, batch_size=20, patience=30),
                                   (X[200:], labels[200:]))
    assert rep.accuracy > 0.9
    np.testing.assert_allclose(clf.predict_proba(X[:5]).sum(axis=1), 1.0)
    clf.save(tmp_path / "c.json")
    back = MovementClassifier.load(tmp_path / "c.json")
    np.testing.assert_array_equal(back.predict(X), clf.predict(X))
