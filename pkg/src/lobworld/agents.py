"""Double DQN, REINFORCE and advantage actor-critic over a discrete action set.

The agents operate on plain state vectors, so the same classes train inside
the dream environment and on the small tabular problems used as oracles.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import (Network, NetworkSpec, clip_global_norm, load_checkpoint, make_optimizer,
                 save_checkpoint, softmax)
from .world import N_ACTIONS, DreamEnv, WorldModel, action_quantities

AGENT_KINDS = ("dqn", "pg", "a2c")
HIDDEN = (128, 128)


def mlp_spec(n_in: int, n_out: int, hidden: Sequence[int] = HIDDEN, seed: int = 0) -> NetworkSpec:
    layers: list[dict] = []
    prev = n_in
    for h in hidden:
        layers += [{"kind": "dense", "n_in": prev, "n_out": int(h)},
                   {"kind": "activation", "fn": "relu"}]
        prev = int(h)
    layers.append({"kind": "dense", "n_in": prev, "n_out": n_out})
    return NetworkSpec((n_in,), tuple(layers), seed)


@dataclass(frozen=True)
class DiscreteAction:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_ACTIONS:
            raise ValueError(f"action index {self.index} outside 0..{N_ACTIONS - 1}")

    @property
    def quantity(self) -> int:
        return int(action_quantities(self.index))

    @classmethod
    def from_quantity(cls, q: int) -> "DiscreteAction":
        from .world import action_index
        return cls(int(action_index(q)))


def discounted_return(rewards, gamma: float) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(r * gamma ** np.arange(len(r))))


def rewards_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``G_t = sum_k gamma^k r_{t+k}`` along the last axis."""
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        acc = rewards[..., t] + gamma * acc
        out[..., t] = acc
    return out


@dataclass(eq=False)
class EpisodeTrace:
    """One episode: states, action indices, (squashed) rewards, raw rewards, positions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    raw_rewards: np.ndarray | None = None
    positions: np.ndarray | None = None
    gamma: float = 0.99

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def discounted_return(self) -> float:
        return discounted_return(self.rewards, self.gamma)


def _check_gamma(gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return float(gamma)


def score_function_gradient(logits: np.ndarray, actions: np.ndarray,
                            weights: np.ndarray) -> np.ndarray:
    """Gradient of ``-mean(weights * log softmax(logits)[action])`` with respect to logits."""
    p = softmax(logits)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(actions)), actions] = 1.0
    return (p - onehot) * (np.asarray(weights, dtype=np.float64)[:, None] / len(actions))


class _Agent:
    kind = ""

    def _nets(self) -> dict[str, Network]:
        raise NotImplementedError

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(path, self._nets(), {"kind": self.kind, "agent": self.settings(),
                                             **(extra or {})})

    def settings(self) -> dict:
        return {"state_dim": self.state_dim, "n_actions": self.n_actions,
                "hidden": list(self.hidden), "gamma": self.gamma, "lr": self.lr,
                "seed": self.seed, "clip_norm": self.clip_norm}


class _StochasticPolicyAgent(_Agent):
    def probabilities(self, states: np.ndarray) -> np.ndarray:
        return softmax(self.policy.forward(np.atleast_2d(states)))

    def act(self, states: np.ndarray, rng: np.random.Generator | None = None,
            greedy: bool = False) -> np.ndarray:
        p = self.probabilities(states)
        if greedy or rng is None:
            return p.argmax(axis=1)
        u = rng.random(len(p))
        return (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1).clip(max=self.n_actions - 1)

    def _policy_step(self, states, actions, weights) -> float:
        logits = self.policy.forward(states)
        self.policy.backward(score_function_gradient(logits, actions, weights))
        grads = self.policy.grads()
        norm = clip_global_norm(grads, self.clip_norm)
        self.policy_opt.step(grads)
        return norm


class PGAgent(_StochasticPolicyAgent):
    """REINFORCE: every step of an episode is weighted by the episode's discounted return."""

    kind = "pg"

    def __init__(self, state_dim: int, n_actions: int = N_ACTIONS, hidden=HIDDEN,
                 gamma: float = 0.99, lr: float = 1e-3, seed: int = 0,
                 clip_norm: float | None = 5.0, baseline: bool = True,
                 reward_to_go: bool = False):
        self.state_dim, self.n_actions, self.hidden = state_dim, n_actions, tuple(hidden)
        self.gamma, self.lr, self.seed, self.clip_norm = _check_gamma(gamma), lr, seed, clip_norm
        self.baseline, self.reward_to_go = baseline, reward_to_go
        self.policy = Network(mlp_spec(state_dim, n_actions, hidden, seed))
        self.policy_opt = make_optimizer("adam", self.policy.params(), lr)

    def _nets(self):
        return {"policy": self.policy}

    def settings(self) -> dict:
        return {**super().settings(), "baseline": self.baseline,
                "reward_to_go": self.reward_to_go}

    def episode_weights(self, rewards: np.ndarray) -> np.ndarray:
        """Per-step weights for a ``(E, H)`` reward block (baseline applied)."""
        if self.reward_to_go:
            w = rewards_to_go(rewards, self.gamma)
        else:
            G = (rewards * self.gamma ** np.arange(rewards.shape[1])).sum(axis=1)
            w = np.repeat(G[:, None], rewards.shape[1], axis=1)
        if self.baseline:
            w = w - w.mean(axis=0, keepdims=True)
        return w

    def pg_update(self, traces: Sequence[EpisodeTrace]) -> float:
        lengths = {len(t) for t in traces}
        if not traces or lengths == {0}:
            raise ValueError("pg_update needs complete non-empty episodes")
        if len(lengths) != 1:
            raise ValueError("episodes in one batch must share a length")
        rewards = np.stack([t.rewards for t in traces])
        weights = self.episode_weights(rewards)
        states = np.concatenate([t.states for t in traces])
        actions = np.concatenate([t.actions for t in traces])
        return self._policy_step(states, actions, weights.reshape(-1))


class A2CAgent(_StochasticPolicyAgent):
    """Actor ascends ``log pi * A``; the critic regresses onto a TD target.

    The TD target bootstraps from ``critic_snapshot``, a frozen copy of the
    critic refreshed after every update (semi-gradient TD).
    """

    kind = "a2c"

    def __init__(self, state_dim: int, n_actions: int = N_ACTIONS, hidden=HIDDEN,
                 gamma: float = 0.99, lr: float = 1e-3, critic_lr: float | None = None,
                 seed: int = 0, clip_norm: float | None = 5.0):
        self.state_dim, self.n_actions, self.hidden = state_dim, n_actions, tuple(hidden)
        self.gamma, self.lr, self.seed, self.clip_norm = _check_gamma(gamma), lr, seed, clip_norm
        self.critic_lr = lr if critic_lr is None else critic_lr
        self.policy = Network(mlp_spec(state_dim, n_actions, hidden, seed))
        self.critic = Network(mlp_spec(state_dim, 1, hidden, seed + 1))
        self.critic_snapshot = self.critic.copy()
        self.policy_opt = make_optimizer("adam", self.policy.params(), lr)
        self.critic_opt = make_optimizer("adam", self.critic.params(), self.critic_lr)
        self.counters: Counter = Counter()

    def _nets(self):
        return {"policy": self.policy, "critic": self.critic}

    def settings(self) -> dict:
        return {**super().settings(), "critic_lr": self.critic_lr}

    def value(self, states: np.ndarray) -> np.ndarray:
        return self.critic.forward(np.atleast_2d(states))[:, 0]

    def advantages(self, states, rewards, next_states, dones) -> np.ndarray:
        boot = self.gamma * self.value(next_states) * (1.0 - dones)
        return rewards + boot - self.value(states)

    def critic_targets(self, rewards, next_states, dones) -> np.ndarray:
        self.counters["snapshot_eval"] += 1
        v_next = self.critic_snapshot.forward(np.atleast_2d(next_states))[:, 0]
        return rewards + self.gamma * v_next * (1.0 - dones)

    def a2c_update(self, states, actions, rewards, next_states, dones=None) -> tuple[float, float]:
        """One actor step and one critic step; returns (actor grad norm, critic loss)."""
        states = np.atleast_2d(states)
        rewards = np.asarray(rewards, dtype=np.float64)
        dones = np.zeros_like(rewards) if dones is None else np.asarray(dones, dtype=np.float64)
        if len(states) == 0:
            raise ValueError("empty rollout")
        adv = self.advantages(states, rewards, next_states, dones)
        norm = self._policy_step(states, np.asarray(actions), adv)
        y = self.critic_targets(rewards, next_states, dones)
        v = self.critic.forward(states)[:, 0]
        diff = v - y
        self.critic.backward((2.0 * diff / len(diff))[:, None])
        grads = self.critic.grads()
        clip_global_norm(grads, self.clip_norm)
        self.critic_opt.step(grads)
        self.critic_snapshot.set_state(self.critic.get_state())
        return norm, float(np.mean(diff ** 2))


class DQNAgent(_Agent):
    """Double DQN: the online net picks ``argmax a'``, the target net scores it."""

    kind = "dqn"

    def __init__(self, state_dim: int, n_actions: int = N_ACTIONS, hidden=HIDDEN,
                 gamma: float = 0.99, lr: float = 1e-3, seed: int = 0,
                 clip_norm: float | None = 5.0, target_period: int = 500,
                 epsilon: float = 1.0):
        self.state_dim, self.n_actions, self.hidden = state_dim, n_actions, tuple(hidden)
        self.gamma, self.lr, self.seed, self.clip_norm = _check_gamma(gamma), lr, seed, clip_norm
        if target_period <= 0:
            raise ValueError("target_period must be positive")
        self.target_period = target_period
        self.epsilon = epsilon
        self.online = Network(mlp_spec(state_dim, n_actions, hidden, seed))
        self.target = self.online.copy()
        self.opt = make_optimizer("adam", self.online.params(), lr)
        self.updates = 0
        self.steps_since_copy = 0
        self.counters: Counter = Counter()

    def _nets(self):
        return {"online": self.online, "target": self.target}

    def settings(self) -> dict:
        return {**super().settings(), "target_period": self.target_period}

    def q_values(self, states: np.ndarray) -> np.ndarray:
        return self.online.forward(np.atleast_2d(states))

    def act(self, states: np.ndarray, rng: np.random.Generator | None = None,
            greedy: bool = False) -> np.ndarray:
        a = self.q_values(states).argmax(axis=1)
        if greedy or rng is None or self.epsilon <= 0:
            return a
        explore = rng.random(len(a)) < self.epsilon
        return np.where(explore, rng.integers(self.n_actions, size=len(a)), a)

    def targets(self, rewards, next_states, dones) -> np.ndarray:
        next_states = np.atleast_2d(next_states)
        self.counters["online_select"] += 1
        a_star = self.online.forward(next_states).argmax(axis=1)
        self.counters["target_evaluate"] += 1
        q_next = self.target.forward(next_states)[np.arange(len(a_star)), a_star]
        return rewards + self.gamma * q_next * (1.0 - dones)

    def dqn_update(self, states, actions, rewards, next_states, dones=None) -> float:
        """One gradient step on the squared TD error; returns the loss."""
        states = np.atleast_2d(states)
        if len(states) == 0:
            raise ValueError("empty batch")
        rewards = np.asarray(rewards, dtype=np.float64)
        dones = np.zeros_like(rewards) if dones is None else np.asarray(dones, dtype=np.float64)
        y = self.targets(rewards, next_states, dones)
        q = self.online.forward(states)
        rows = np.arange(len(q))
        diff = q[rows, actions] - y
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * diff / len(diff)
        self.online.backward(dq)
        grads = self.online.grads()
        clip_global_norm(grads, self.clip_norm)
        self.opt.step(grads)
        if not np.all(np.isfinite(q)):
            raise FloatingPointError("Q values became non-finite")
        self.updates += 1
        self.steps_since_copy += 1
        if self.steps_since_copy >= self.target_period:
            self.sync_target()
        return float(np.mean(diff ** 2))

    def sync_target(self) -> None:
        self.target.set_state(self.online.get_state())
        self.steps_since_copy = 0


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.d = np.zeros(capacity)
        self.size = 0
        self.head = 0

    def add(self, s, a, r, s2, d) -> None:
        for i in range(len(a)):
            j = self.head
            self.s[j], self.a[j], self.r[j], self.s2[j], self.d[j] = s[i], a[i], r[i], s2[i], d[i]
            self.head = (j + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=n)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]


def make_agent(kind: str, state_dim: int, cfg: "AgentConfig") -> _Agent:
    common = dict(state_dim=state_dim, n_actions=N_ACTIONS, hidden=cfg.hidden, gamma=cfg.gamma,
                  lr=cfg.lr, seed=cfg.seed, clip_norm=cfg.clip_norm)
    if kind == "dqn":
        return DQNAgent(**common, target_period=cfg.target_period, epsilon=cfg.epsilon_start)
    if kind == "pg":
        return PGAgent(**common, baseline=cfg.baseline, reward_to_go=cfg.reward_to_go)
    if kind == "a2c":
        return A2CAgent(**common)
    raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")


def load_agent(path: str | Path) -> tuple[_Agent, dict]:
    nets, extra = load_checkpoint(path)
    s = dict(extra["agent"])
    kind = extra["kind"]
    hidden = tuple(s.pop("hidden"))
    if kind == "dqn":
        agent = DQNAgent(hidden=hidden, epsilon=0.0, **s)
        agent.online.set_state(nets["online"].get_state())
        agent.target.set_state(nets["target"].get_state())
    elif kind == "pg":
        agent = PGAgent(hidden=hidden, **s)
        agent.policy.set_state(nets["policy"].get_state())
    elif kind == "a2c":
        agent = A2CAgent(hidden=hidden, **s)
        agent.policy.set_state(nets["policy"].get_state())
        agent.critic.set_state(nets["critic"].get_state())
        agent.critic_snapshot.set_state(nets["critic"].get_state())
    else:
        raise ValueError(f"checkpoint holds unknown agent kind {kind!r}")
    return agent, extra


# ----------------------------------------------------------------------------- dreams

def dream_rollouts(agent, world: WorldModel, H: int, rng: np.random.Generator,
                   n_episodes: int = 1, greedy: bool = False,
                   start_index: np.ndarray | None = None, gamma: float | None = None,
                   temperature: float | None = None) -> list[EpisodeTrace]:
    """Run ``n_episodes`` dreams of ``H`` steps in lock step."""
    gamma = getattr(agent, "gamma", 0.99) if gamma is None else gamma
    if H <= 0:
        d = world.state_dim
        return [EpisodeTrace(np.zeros((0, d)), np.zeros(0, dtype=np.int64), np.zeros(0),
                             np.zeros(0), np.zeros(0, dtype=np.int64), gamma)
                for _ in range(n_episodes)]
    env = DreamEnv(world, n_episodes, rng, temperature)
    s = env.reset(start_index)
    S, A, R, RAW, P = [], [], [], [], []
    for _ in range(H):
        a = agent.act(s, rng, greedy=greedy)
        S.append(s)
        A.append(a)
        s, raw, sq = env.step(a)
        R.append(sq)
        RAW.append(raw)
        P.append(env.po.copy())
    S, A, R, RAW, P = (np.stack(x, axis=1) for x in (S, A, R, RAW, P))
    return [EpisodeTrace(S[i], A[i], R[i], RAW[i], P[i], gamma) for i in range(n_episodes)]


def dream_rollout(agent, world: WorldModel, H: int, rng: np.random.Generator,
                  greedy: bool = False) -> EpisodeTrace:
    return dream_rollouts(agent, world, H, rng, 1, greedy)[0]


class RandomAgent:
    """Uniform over actions; the reference for learning-curve improvement."""

    kind = "random"

    def __init__(self, n_actions: int = N_ACTIONS):
        self.n_actions = n_actions

    def act(self, states, rng=None, greedy=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        return rng.integers(self.n_actions, size=len(np.atleast_2d(states)))


# ----------------------------------------------------------------------------- training

@dataclass(frozen=True)
class AgentConfig:
    kind: str = "pg"
    gamma: float = 0.99
    horizon: int = 500
    lr: float = 1e-3
    hidden: tuple[int, ...] = HIDDEN
    clip_norm: float | None = 5.0
    seed: int = 0
    iterations: int = 60
    episodes_per_iteration: int = 16
    patience: int = 15
    smoothing: int = 5
    temperature: float = 1.0
    # pg
    baseline: bool = True
    reward_to_go: bool = False
    # a2c
    a2c_minibatch: int = 1000
    # dqn
    target_period: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_iterations: int = 30
    batch_size: int = 64
    buffer_size: int = 50_000
    updates_per_iteration: int = 200

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}; expected one of {AGENT_KINDS}")
        _check_gamma(self.gamma)
        if self.horizon <= 0 or self.iterations < 0 or self.episodes_per_iteration <= 0:
            raise ValueError("horizon, iterations and episodes_per_iteration must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class LearningCurve:
    iteration: list[int] = field(default_factory=list)
    mean_return: list[float] = field(default_factory=list)      # squashed, discounted
    mean_raw_pnl: list[float] = field(default_factory=list)     # unsquashed, undiscounted
    epsilon: list[float] = field(default_factory=list)
    best_iteration: int = -1
    stopped_early: bool = False

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "mean_return", "mean_raw_pnl", "epsilon"])
            for row in zip(self.iteration, self.mean_return, self.mean_raw_pnl, self.epsilon):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _snapshot(agent) -> dict:
    return {k: n.get_state() for k, n in agent._nets().items()}


def _restore(agent, snap: dict) -> None:
    for k, n in agent._nets().items():
        n.set_state(snap[k])
    if isinstance(agent, A2CAgent):
        agent.critic_snapshot.set_state(agent.critic.get_state())


def _a2c_train_step(agent: A2CAgent, traces: list[EpisodeTrace], cfg: AgentConfig,
                    rng: np.random.Generator) -> None:
    s = np.concatenate([t.states[:-1] for t in traces])
    s2 = np.concatenate([t.states[1:] for t in traces])
    a = np.concatenate([t.actions[:-1] for t in traces])
    r = np.concatenate([t.rewards[:-1] for t in traces])
    # the final step of each episode ends it: no bootstrap
    s = np.concatenate([s, np.stack([t.states[-1] for t in traces])])
    s2 = np.concatenate([s2, np.stack([t.states[-1] for t in traces])])
    a = np.concatenate([a, np.array([t.actions[-1] for t in traces])])
    r = np.concatenate([r, np.array([t.rewards[-1] for t in traces])])
    d = np.zeros(len(r))
    d[-len(traces):] = 1.0
    order = rng.permutation(len(r))
    for start in range(0, len(r), cfg.a2c_minibatch):
        idx = order[start:start + cfg.a2c_minibatch]
        agent.a2c_update(s[idx], a[idx], r[idx], s2[idx], d[idx])


def _dqn_train_step(agent: DQNAgent, buf: ReplayBuffer, traces: list[EpisodeTrace],
                    next_states: np.ndarray, cfg: AgentConfig, rng: np.random.Generator) -> None:
    for i, t in enumerate(traces):
        s2 = np.concatenate([t.states[1:], next_states[i:i + 1]])
        d = np.zeros(len(t))
        d[-1] = 1.0
        buf.add(t.states, t.actions, t.rewards, s2, d)
    for _ in range(cfg.updates_per_iteration):
        agent.dqn_update(*buf.sample(cfg.batch_size, rng))


def train_agent(kind: str, world: WorldModel, cfg: AgentConfig | None = None
                ) -> tuple[_Agent, LearningCurve]:
    """Train entirely inside ``world``; returns the best smoothed-return policy and its curve.

    Stops early once the moving average of the dream return has not improved
    for ``patience`` iterations.
    """
    cfg = replace(cfg or AgentConfig(kind=kind), kind=kind)
    rng = np.random.default_rng(cfg.seed)
    agent = make_agent(kind, world.state_dim, cfg)
    buf = ReplayBuffer(cfg.buffer_size, world.state_dim) if kind == "dqn" else None
    curve = LearningCurve()
    best, best_snap, since = -np.inf, _snapshot(agent), 0
    B, H = cfg.episodes_per_iteration, cfg.horizon
    for it in range(cfg.iterations):
        if kind == "dqn":
            frac = min(it / max(cfg.epsilon_decay_iterations, 1), 1.0)
            agent.epsilon = cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)
        env = DreamEnv(world, B, rng, cfg.temperature)
        s = env.reset()
        S, A, R, RAW = [], [], [], []
        for _ in range(H):
            a = agent.act(s, rng)
            S.append(s)
            A.append(a)
            s, raw, sq = env.step(a)
            R.append(sq)
            RAW.append(raw)
        S, A, R, RAW = (np.stack(x, axis=1) for x in (S, A, R, RAW))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(RAW))):
            raise FloatingPointError(f"non-finite dream return at iteration {it}")
        traces = [EpisodeTrace(S[i], A[i], R[i], RAW[i], None, cfg.gamma) for i in range(B)]
        curve.iteration.append(it)
        curve.mean_return.append(float(np.mean([t.discounted_return for t in traces])))
        curve.mean_raw_pnl.append(float(RAW.sum(axis=1).mean()))
        curve.epsilon.append(float(getattr(agent, "epsilon", 0.0)))
        # score the policy that generated this batch before updating it
        smooth = float(np.mean(curve.mean_return[-cfg.smoothing:]))
        if len(curve.mean_return) >= min(cfg.smoothing, cfg.iterations) and smooth > best:
            best, best_snap, since = smooth, _snapshot(agent), 0
            curve.best_iteration = it
        else:
            since += 1
            if since >= cfg.patience:
                curve.stopped_early = True
                break
        if kind == "pg":
            agent.pg_update(traces)
        elif kind == "a2c":
            _a2c_train_step(agent, traces, cfg, rng)
        else:
            _dqn_train_step(agent, buf, traces, s, cfg, rng)
    _restore(agent, best_snap)
    if kind == "dqn":
        agent.epsilon = 0.0
    return agent, curve


def mean_dream_return(agent, world: WorldModel, H: int, n_episodes: int,
                      rng: np.random.Generator, gamma: float = 0.99,
                      greedy: bool = False) -> float:
    traces = dream_rollouts(agent, world, H, rng, n_episodes, greedy=greedy, gamma=gamma)
    return float(np.mean([t.discounted_return for t in traces]))
