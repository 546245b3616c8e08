from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobworld.agents import (A2CAgent, AgentConfig, DiscreteAction, DQNAgent, EpisodeTrace,
                             PGAgent, RandomAgent, ReplayBuffer, discounted_return,
                             dream_rollouts, load_agent, make_agent, rewards_to_go,
                             score_function_gradient, train_agent)
from lobworld.nn import softmax

# ----------------------------------------------------------------------------- oracles

# two-state MDP: (state, action) -> (reward, next state)
MDP = {(0, 0): (1.0, 0), (0, 1): (0.0, 1), (1, 0): (0.0, 0), (1, 1): (2.0, 1)}
STATES = np.eye(2)


def value_iteration(gamma: float, tol: float = 1e-12) -> np.ndarray:
    Q = np.zeros((2, 2))
    while True:
        V = Q.max(axis=1)
        new = np.array([[MDP[s, a][0] + gamma * V[MDP[s, a][1]] for a in (0, 1)] for s in (0, 1)])
        if np.abs(new - Q).max() < tol:
            return new
        Q = new


def train_dqn_on_mdp(gamma=0.9, updates=4000, seed=0) -> DQNAgent:
    agent = DQNAgent(2, 2, hidden=(32,), gamma=gamma, lr=5e-3, seed=seed, target_period=100,
                     epsilon=1.0)
    rng = np.random.default_rng(seed)
    for _ in range(updates):
        s = rng.integers(2, size=32)
        a = rng.integers(2, size=32)
        r = np.array([MDP[i, j][0] for i, j in zip(s, a)])
        s2 = np.array([MDP[i, j][1] for i, j in zip(s, a)])
        agent.dqn_update(STATES[s], a, r, STATES[s2])
    return agent


def train_pg_bandit(seed=0, iterations=300) -> PGAgent:
    """Arm 1 pays N(1, 0.5^2), arm 0 pays N(0.2, 0.5^2); one-step episodes."""
    agent = PGAgent(1, 2, hidden=(8,), gamma=1.0, lr=2e-2, seed=seed)
    rng = np.random.default_rng(seed)
    s = np.ones((1, 1))
    for _ in range(iterations):
        traces = []
        for _ in range(32):
            a = agent.act(s, rng)
            r = rng.normal(1.0 if a[0] == 1 else 0.2, 0.5, 1)
            traces.append(EpisodeTrace(s, a, r, gamma=1.0))
        agent.pg_update(traces)
    return agent


def train_a2c_critic(c=1.0, gamma=0.9, steps=3000, seed=0) -> A2CAgent:
    agent = A2CAgent(1, 2, hidden=(16,), gamma=gamma, lr=1e-3, critic_lr=1e-2, seed=seed)
    s = np.ones((8, 1))
    for _ in range(steps):
        agent.a2c_update(s, np.zeros(8, dtype=np.int64), np.full(8, c), s)
    return agent


# ----------------------------------------------------------------------------- returns

@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0.01, 1.0))
def test_discounted_return_brute_force(rewards, gamma):
    expected = 0.0
    for k, r in enumerate(rewards):
        expected += gamma ** k * r
    assert discounted_return(rewards, gamma) == pytest.approx(expected, abs=1e-9)
    rtg = rewards_to_go(np.array(rewards), gamma)
    assert rtg[0] == pytest.approx(expected, abs=1e-9)
    for t in range(len(rewards)):
        assert rtg[t] == pytest.approx(discounted_return(rewards[t:], gamma), abs=1e-9)


def test_score_function_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 3))
    a = np.array([0, 2, 1, 1])
    w = rng.standard_normal(4)

    def obj(z):
        logp = np.log(softmax(z))
        return -np.mean(w * logp[np.arange(4), a])

    g = score_function_gradient(logits, a, w)
    num = np.zeros_like(logits)
    for i in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[i] = 1e-6
        num[i] = (obj(logits + e) - obj(logits - e)) / 2e-6
    np.testing.assert_allclose(g, num, atol=1e-8)


def test_policy_gradient_estimate_points_to_better_arm():
    # uniform policy; the mean descent direction must raise the better arm's logit
    rng = np.random.default_rng(0)
    n = 10_000
    a = rng.integers(2, size=n)
    r = np.where(a == 1, rng.normal(1.0, 0.5, n), rng.normal(0.2, 0.5, n))
    g = score_function_gradient(np.zeros((n, 2)), a, r).sum(axis=0)
    assert g[1] < 0 < g[0]


def test_episode_weights_baseline_and_reward_to_go():
    r = np.array([[1.0, 0.0], [0.0, 3.0]])
    pg = PGAgent(1, 2, hidden=(2,), gamma=0.5, baseline=False)
    np.testing.assert_allclose(pg.episode_weights(r), [[1, 1], [1.5, 1.5]])
    pg.reward_to_go = True
    np.testing.assert_allclose(pg.episode_weights(r), [[1, 0], [1.5, 3]])
    pg.baseline = True
    np.testing.assert_allclose(pg.episode_weights(r).mean(axis=0), 0)


def test_discrete_action_grid():
    assert DiscreteAction(0).quantity == -1000
    assert DiscreteAction(10).quantity == 0
    assert DiscreteAction(20).quantity == 1000
    assert DiscreteAction.from_quantity(-300).index == 7
    with pytest.raises(ValueError):
        DiscreteAction(21)


# ----------------------------------------------------------------------------- mechanics

def test_dqn_target_uses_online_argmax_and_target_value():
    agent = DQNAgent(2, 3, hidden=(4,), gamma=0.5, seed=0)
    agent.target = DQNAgent(2, 3, hidden=(4,), seed=9).online   # make the two nets differ
    s2 = np.random.default_rng(0).standard_normal((5, 2))
    r, d = np.arange(5.0), np.array([0, 0, 1, 0, 0.0])
    a_star = agent.online.forward(s2).argmax(axis=1)
    q_t = agent.target.forward(s2)
    expected = r + 0.5 * q_t[np.arange(5), a_star] * (1 - d)
    np.testing.assert_allclose(agent.targets(r, s2, d), expected)
    assert agent.counters["online_select"] == 1 and agent.counters["target_evaluate"] == 1
    assert not np.allclose(expected, r + 0.5 * q_t.max(axis=1) * (1 - d))


def test_dqn_target_sync_period():
    agent = DQNAgent(2, 2, hidden=(4,), seed=0, target_period=3)
    s = np.eye(2)
    for i in range(3):
        before = agent.target.get_state()
        agent.dqn_update(s, np.array([0, 1]), np.ones(2), s)
        if i < 2:
            for k, v in agent.target.get_state().items():
                np.testing.assert_array_equal(v, before[k])
    for k, v in agent.target.get_state().items():
        np.testing.assert_array_equal(v, agent.online.get_state()[k])


def test_a2c_bootstraps_from_snapshot_and_refreshes_it():
    agent = A2CAgent(2, 2, hidden=(4,), gamma=0.9, seed=0)
    s = np.random.default_rng(0).standard_normal((3, 2))
    for p in agent.critic.params():
        p += 0.5           # live critic now differs from its snapshot
    snap_v = agent.critic_snapshot.forward(s)[:, 0]
    np.testing.assert_allclose(agent.critic_targets(np.zeros(3), s, np.zeros(3)), 0.9 * snap_v)
    agent.a2c_update(s, np.array([0, 1, 0]), np.ones(3), s)
    np.testing.assert_array_equal(agent.critic_snapshot.forward(s), agent.critic.forward(s))


def test_epsilon_greedy_exploration_rate():
    agent = DQNAgent(2, 4, hidden=(4,), seed=0, epsilon=0.5)
    rng = np.random.default_rng(0)
    s = np.zeros((20000, 2))
    greedy = agent.act(s, greedy=True)
    frac = np.mean(agent.act(s, rng) != greedy)
    assert frac == pytest.approx(0.5 * 3 / 4, abs=0.02)


def test_replay_buffer_wraps():
    buf = ReplayBuffer(3, 1)
    for i in range(5):
        buf.add(np.array([[i]]), np.array([i]), np.array([i]), np.array([[i]]), np.array([0]))
    assert buf.size == 3
    assert sorted(buf.a.tolist()) == [2, 3, 4]


@pytest.mark.parametrize("kind", ["dqn", "pg", "a2c"])
def test_agent_checkpoint_round_trip(tmp_path, kind):
    agent = make_agent(kind, 5, AgentConfig(kind=kind, hidden=(8,), seed=3))
    agent.save(tmp_path / "a.json")
    back, extra = load_agent(tmp_path / "a.json")
    assert extra["kind"] == kind and type(back) is type(agent)
    s = np.random.default_rng(0).standard_normal((4, 5))
    np.testing.assert_array_equal(back.act(s, greedy=True), agent.act(s, greedy=True))


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(kind="sarsa")
    with pytest.raises(ValueError):
        AgentConfig(gamma=0.0)


# ----------------------------------------------------------------------------- RL oracles

def test_dqn_matches_value_iteration():
    gamma = 0.9
    Q = value_iteration(gamma)
    np.testing.assert_allclose(Q, [[17.2, 18.0], [16.2, 20.0]], atol=1e-6)
    agent = train_dqn_on_mdp(gamma)
    np.testing.assert_array_equal(agent.act(STATES, greedy=True), Q.argmax(axis=1))
    np.testing.assert_allclose(agent.q_values(STATES), Q, rtol=0.05)


def test_pg_solves_two_armed_bandit():
    agent = train_pg_bandit()
    assert agent.probabilities(np.ones((1, 1)))[0, 1] > 0.95


def test_a2c_critic_converges_to_geometric_sum():
    c, gamma = 1.0, 0.9
    agent = train_a2c_critic(c, gamma)
    assert agent.value(np.ones((1, 1)))[0] == pytest.approx(c / (1 - gamma), rel=0.05)


# ----------------------------------------------------------------------------- dreams

def test_dream_rollouts_shapes_and_positions(tiny_world):
    agent = RandomAgent()
    traces = dream_rollouts(agent, tiny_world, 12, np.random.default_rng(0), 3)
    assert len(traces) == 3
    for t in traces:
        assert t.states.shape == (12, tiny_world.state_dim)
        assert np.all(np.abs(t.positions) <= 1000)
        assert np.all((t.rewards > 0) & (t.rewards < 1))
        np.testing.assert_allclose(t.states[1:, -1] * 1000, t.positions[:-1])
    assert all(len(t) == 0 for t in dream_rollouts(agent, tiny_world, 0, np.random.default_rng(0), 2))


@pytest.mark.parametrize("kind", ["dqn", "pg", "a2c"])
def test_train_agent_runs_and_restores_best(tiny_world, tmp_path, kind):
    cfg = AgentConfig(kind=kind, horizon=10, hidden=(8,), iterations=4, episodes_per_iteration=3,
                      smoothing=2, patience=10, updates_per_iteration=5, batch_size=8,
                      a2c_minibatch=16, seed=1)
    agent, curve = train_agent(kind, tiny_world, cfg)
    assert len(curve.iteration) == 4
    assert 0 <= curve.best_iteration < 4
    curve.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("iteration,mean_return")
    again, curve2 = train_agent(kind, tiny_world, cfg)
    assert curve2.mean_return == curve.mean_return
