"""World model bundle and batched dream environment.

The world model is the trained encoder, transition model, and reward model
plus what a dream needs to start and run: reward-squashing bounds, a set
of day-initial histories, and a pool of real trade-context embeddings.  The
transition model does not generate trade prints, so each dream step draws
its next context embedding from that pool.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autoencoder import AutoEncoder
from .data import (CONTEXT_LENGTH, QTY_MAX, TICKS_PER_STATE, DayData, StateChain,
                   minmax_columns, state_chain)
from .reward import (FEE_RATE, SQUASH_RANGE, RewardBounds, RewardModel, clamp_positions,
                     squash_reward)
from .transition import (CONTEXT_EMBED_DIM, SEQ_LEN, TransitionModel, embed_context,
                         step_inputs)

N_ACTIONS = 21
ACTION_STEP = 100


def action_quantities(index) -> np.ndarray:
    """Index 0..20 -> signed quantity -1000..+1000 in steps of 100 (10 is no trade)."""
    return (np.asarray(index, dtype=np.int64) - N_ACTIONS // 2) * ACTION_STEP


def action_index(quantity) -> np.ndarray:
    q = np.asarray(quantity, dtype=np.int64)
    if np.any(q % ACTION_STEP) or np.any(np.abs(q) > ACTION_STEP * (N_ACTIONS // 2)):
        raise ValueError(f"quantity {quantity} is not on the action grid")
    return q // ACTION_STEP + N_ACTIONS // 2


def agent_state_vector(z, context_embedding, po, po_max: int = QTY_MAX) -> np.ndarray:
    """Concatenate latent, context embedding and ``po / po_max`` (batched on leading axes)."""
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(context_embedding, dtype=np.float64)
    p = np.asarray(po, dtype=np.float64)[..., None] / po_max
    return np.concatenate([z, u, p], axis=-1)


# ----------------------------------------------------------------------------- corpus

@dataclass(frozen=True, eq=False)
class ChainLatents:
    z: np.ndarray          # (n, m)
    emb: np.ndarray        # (n, 8)
    flows: np.ndarray      # (n,)
    mean_mids: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.z)


def encode_chain(chain: StateChain, ae: AutoEncoder) -> ChainLatents:
    if len(chain) == 0:
        m = ae.latent_dim
        return ChainLatents(np.zeros((0, m)), np.zeros((0, CONTEXT_EMBED_DIM)),
                            np.zeros(0, dtype=np.int64), np.zeros(0))
    feats = minmax_columns(np.stack([w.features for w in chain.windows]))
    z = ae.encode_batch(feats)
    emb = np.stack([embed_context(c) for c in chain.contexts])
    return ChainLatents(z, emb, chain.flows.copy(), chain.mean_mids())


def chain_latents(days: Sequence[DayData], ae: AutoEncoder, W: int = TICKS_PER_STATE,
                  U: int = CONTEXT_LENGTH, offsets: Sequence[int] = (0,),
                  po_max: int = QTY_MAX) -> list[ChainLatents]:
    return [encode_chain(state_chain(d, W, U, offset=o, po_max=po_max), ae)
            for d in days for o in offsets]


def transition_rows(c: ChainLatents) -> tuple[np.ndarray, np.ndarray]:
    """Row k is ``(z_k, flow_{k+1}, u_k)``; its target is ``z_{k+1}``."""
    return step_inputs(c.z[:-1], c.flows[1:], c.emb[:-1]), c.z[1:]


def transition_corpus(chains: Sequence[ChainLatents], seq_len: int = SEQ_LEN
                      ) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for c in chains:
        if len(c) < seq_len + 1:
            continue
        x, y = transition_rows(c)
        idx = np.arange(len(x) - seq_len + 1)[:, None] + np.arange(seq_len)[None, :]
        xs.append(x[idx])
        ys.append(y[idx])
    if not xs:
        raise ValueError(f"no chain is longer than seq_len={seq_len}")
    return np.concatenate(xs), np.concatenate(ys)


def reward_corpus(chains: Sequence[ChainLatents]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep = [c for c in chains if len(c) >= 2]
    return (np.concatenate([c.z[:-1] for c in keep]), np.concatenate([c.z[1:] for c in keep]),
            np.concatenate([np.diff(c.mean_mids) for c in keep]))


@dataclass(frozen=True, eq=False)
class InitialStates:
    """Real day openings: ``N - 1`` history rows plus the first decision state."""

    prefix: np.ndarray  # (S, N-1, input_dim)
    z: np.ndarray       # (S, m)
    emb: np.ndarray     # (S, 8)

    def __len__(self) -> int:
        return len(self.z)

    def to_dict(self) -> dict:
        return {"prefix": self.prefix.tolist(), "z": self.z.tolist(), "emb": self.emb.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialStates":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("prefix", "z", "emb")))


def initial_states(chains: Sequence[ChainLatents], seq_len: int = SEQ_LEN) -> InitialStates:
    keep = [c for c in chains if len(c) >= seq_len]
    if not keep:
        raise ValueError("no chain long enough to seed a dream")
    prefix = np.stack([transition_rows(c)[0][:seq_len - 1] for c in keep])
    return InitialStates(prefix, np.stack([c.z[seq_len - 1] for c in keep]),
                         np.stack([c.emb[seq_len - 1] for c in keep]))


# ----------------------------------------------------------------------------- bundle

@dataclass(frozen=True)
class WorldConfig:
    W: int = TICKS_PER_STATE
    U: int = CONTEXT_LENGTH
    seq_len: int = SEQ_LEN
    po_max: int = QTY_MAX
    fee_rate: float = FEE_RATE
    squash_range: tuple[float, float] = SQUASH_RANGE
    temperature: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["squash_range"] = list(self.squash_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        d["squash_range"] = tuple(d.get("squash_range", SQUASH_RANGE))
        return cls(**d)


@dataclass(eq=False)
class WorldModel:
    autoencoder: AutoEncoder
    transition: TransitionModel
    reward: RewardModel
    bounds: RewardBounds
    initial: InitialStates
    context_pool: np.ndarray  # (P, 8)
    config: WorldConfig = WorldConfig()

    @property
    def state_dim(self) -> int:
        return self.autoencoder.latent_dim + CONTEXT_EMBED_DIM + 1

    def save(self, directory: str | Path) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        self.autoencoder.save(root / "autoencoder.json")
        self.transition.save(root / "transition.json")
        self.reward.save(root / "reward.json", {"bounds": self.bounds.to_dict()})
        save_world_extras(root / "world.json", self.initial, self.context_pool, self.config)
        return root

    @classmethod
    def load(cls, directory: str | Path) -> "WorldModel":
        root = Path(directory)
        return cls.from_files(root / "autoencoder.json", root / "transition.json",
                              root / "reward.json", root / "world.json")

    @classmethod
    def from_files(cls, ae_path, transition_path, reward_path, extras_path) -> "WorldModel":
        for p in (ae_path, transition_path, reward_path, extras_path):
            if not Path(p).exists():
                raise FileNotFoundError(f"world-model checkpoint missing: {p}")
        reward, extra = RewardModel.load(reward_path)
        initial, pool, cfg = load_world_extras(extras_path)
        return cls(AutoEncoder.load(ae_path), TransitionModel.load(transition_path), reward,
                   RewardBounds.from_dict(extra["bounds"]), initial, pool, cfg)


def save_world_extras(path: str | Path, initial: InitialStates, pool: np.ndarray,
                      cfg: WorldConfig) -> None:
    doc = {"config": cfg.to_dict(), "initial": initial.to_dict(), "context_pool": pool.tolist()}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_world_extras(path: str | Path) -> tuple[InitialStates, np.ndarray, WorldConfig]:
    doc = json.loads(Path(path).read_text())
    return (InitialStates.from_dict(doc["initial"]),
            np.asarray(doc["context_pool"], dtype=np.float64).reshape(-1, CONTEXT_EMBED_DIM),
            WorldConfig.from_dict(doc["config"]))


class DreamEnv:
    """``n_envs`` independent dreams advanced in lock step.

    Every dream keeps its own sliding history of the last ``N - 1`` inputs; a
    step appends the agent's action to the current state, runs the
    transition model on the full ``N`` rows and samples the next latent.
    """

    def __init__(self, world: WorldModel, n_envs: int, rng: np.random.Generator,
                 temperature: float | None = None, fee_rate: float | None = None):
        if n_envs <= 0:
            raise ValueError("n_envs must be positive")
        self.world = world
        self.n_envs = n_envs
        self.rng = rng
        self.temperature = world.config.temperature if temperature is None else temperature
        self.fee_rate = world.config.fee_rate if fee_rate is None else fee_rate

    def reset(self, start_index: np.ndarray | None = None) -> np.ndarray:
        init = self.world.initial
        idx = (self.rng.integers(len(init), size=self.n_envs) if start_index is None
               else np.asarray(start_index))
        self.history = init.prefix[idx].copy()
        self.z = init.z[idx].copy()
        self.u = init.emb[idx].copy()
        self.po = np.zeros(self.n_envs, dtype=np.int64)
        return self.state()

    def state(self) -> np.ndarray:
        return agent_state_vector(self.z, self.u, self.po, self.world.config.po_max)

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(next_states, raw_rewards, squashed_rewards)``."""
        w = self.world
        q = action_quantities(actions)
        po_new = clamp_positions(self.po, q, w.config.po_max)
        row = step_inputs(self.z, q, self.u)
        full = np.concatenate([self.history, row[:, None, :]], axis=1)
        z_next = w.transition.sample_next(full, self.rng, self.temperature)
        dm = w.reward.predict_delta(self.z, z_next)
        raw = dm * po_new - self.fee_rate * np.abs(po_new - self.po) * np.abs(dm)
        self.history = full[:, 1:]
        self.z = z_next
        self.u = w.context_pool[self.rng.integers(len(w.context_pool), size=self.n_envs)]
        self.po = po_new
        return self.state(), raw, squash_reward(raw, w.bounds)
