"""Position dynamics, exact replay rewards, fees, reward squashing, and the learned reward model.

Timing convention used throughout: an action taken at state ``t`` executes at
the mid price and the resulting position earns the change in average mid
from ``t`` to ``t + 1``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import QTY_MAX, LobWindow
from .nn import (FitResult, Network, NetworkSpec, TrainConfig, fit, load_checkpoint,
                 save_checkpoint, sigmoid)

PO_MAX = QTY_MAX
FEE_RATE = 0.02
SQUASH_RANGE = (-6.0, 6.0)
REWARD_LSTM_UNITS = 128
REWARD_DENSE_UNITS = 40


@dataclass(frozen=True)
class Position:
    po: int = 0
    po_max: int = PO_MAX

    def __post_init__(self):
        if self.po_max <= 0:
            raise ValueError("po_max must be positive")
        if abs(self.po) > self.po_max:
            raise ValueError(f"|po|={abs(self.po)} exceeds po_max={self.po_max}")

    @property
    def normalized(self) -> float:
        return self.po / self.po_max


def clamp_positions(po, a, po_max: int = PO_MAX):
    """Vectorised position update: buys cap at ``po_max``, sells floor at ``-po_max``."""
    po = np.asarray(po)
    a = np.asarray(a)
    up = np.minimum(po + np.abs(a), po_max)
    down = np.maximum(po - np.abs(a), -po_max)
    return np.where(a > 0, up, np.where(a < 0, down, po))


def step_position(position: Position, a: int) -> Position:
    """Apply signed quantity ``a`` to ``position`` with the capacity clamp."""
    return Position(int(clamp_positions(position.po, a, position.po_max)), position.po_max)


def delta_mid(window_t: LobWindow, window_t1: LobWindow) -> float:
    """Difference of the per-tick mid averaged over each window."""
    return window_t1.mean_mid() - window_t.mean_mid()


def replay_reward(window_t: LobWindow, window_t1: LobWindow, po) -> float:
    """Mark-to-market PnL of holding ``po`` between two raw windows."""
    po = po.po if isinstance(po, Position) else po
    if po == 0:
        return 0.0
    return delta_mid(window_t, window_t1) * po


def transaction_fee(executed_quantity, dmid, rate: float = FEE_RATE):
    """Fee charged on execution: ``rate * |executed quantity| * |change in mid|``."""
    return rate * np.abs(executed_quantity) * np.abs(dmid)


@dataclass(frozen=True)
class RewardBounds:
    """Min-max bounds of raw rewards on the training split."""

    lo: float
    hi: float
    target: tuple[float, float] = SQUASH_RANGE

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("reward bounds need hi > lo")
        object.__setattr__(self, "target", tuple(float(t) for t in self.target))

    @classmethod
    def from_delta_mids(cls, delta_mids, po_max: int = PO_MAX,
                        target: tuple[float, float] = SQUASH_RANGE) -> "RewardBounds":
        """Symmetric bounds: the largest training |change in mid| at full position."""
        span = float(np.max(np.abs(delta_mids))) * po_max
        if span <= 0:
            span = 1.0
        return cls(-span, span, target)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBounds":
        return cls(float(d["lo"]), float(d["hi"]), tuple(d["target"]))


def squash_reward(r, bounds: RewardBounds):
    """Sigmoid of the reward min-max mapped onto ``bounds.target``; dream training only."""
    a, b = bounds.target
    scaled = a + (np.asarray(r, dtype=np.float64) - bounds.lo) / (bounds.hi - bounds.lo) * (b - a)
    out = sigmoid(np.atleast_1d(scaled))
    return float(out[0]) if np.ndim(r) == 0 else out.reshape(np.shape(r))


# ----------------------------------------------------------------------------- learned model

@dataclass(frozen=True)
class RewardConfig:
    latent_dim: int = 16
    lstm_units: int = REWARD_LSTM_UNITS
    dense_units: int = REWARD_DENSE_UNITS
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def reward_spec(cfg: RewardConfig) -> NetworkSpec:
    return NetworkSpec((2, cfg.latent_dim), (
        {"kind": "lstm", "n_in": cfg.latent_dim, "n_hidden": cfg.lstm_units},
        {"kind": "dense", "n_in": cfg.lstm_units, "n_out": cfg.dense_units},
        {"kind": "activation", "fn": "tanh"},
        {"kind": "dense", "n_in": cfg.dense_units, "n_out": 1},
    ), cfg.seed)


class RewardModel:
    """Regresses the change in average mid from the latent pair ``(z_t, z_{t+1})``.

    The LSTM reads the pair as a two-step sequence.  Targets are divided by
    ``scale`` during training; predictions are returned in price units.
    """

    def __init__(self, cfg: RewardConfig = RewardConfig(), net: Network | None = None,
                 scale: float = 1.0):
        self.cfg = cfg
        self.net = net if net is not None else Network(reward_spec(cfg))
        self.scale = float(scale)

    @staticmethod
    def pair(z_t: np.ndarray, z_t1: np.ndarray) -> np.ndarray:
        return np.stack([np.atleast_2d(z_t), np.atleast_2d(z_t1)], axis=1)

    def predict_delta(self, z_t: np.ndarray, z_t1: np.ndarray) -> np.ndarray:
        return self.net.forward(self.pair(z_t, z_t1))[:, 0] * self.scale

    def predict_reward(self, z_t, z_t1, po) -> np.ndarray:
        """Learned change in mid times position; exactly zero where ``po == 0``."""
        po = np.asarray(getattr(po, "po", po), dtype=np.float64)
        dm = self.predict_delta(np.asarray(getattr(z_t, "z", z_t)),
                                np.asarray(getattr(z_t1, "z", z_t1)))
        out = np.where(po == 0, 0.0, dm * po)
        return out

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(path, {"reward": self.net},
                        {"reward_config": self.cfg.to_dict(), "scale": self.scale,
                         **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> tuple["RewardModel", dict]:
        nets, extra = load_checkpoint(path)
        return cls(RewardConfig(**extra["reward_config"]), nets["reward"], extra["scale"]), extra


def train_reward(z_t: np.ndarray, z_t1: np.ndarray, dmid: np.ndarray,
                 cfg: RewardConfig = RewardConfig(), train: TrainConfig = TrainConfig(),
                 val: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                 ) -> tuple[RewardModel, FitResult]:
    """Least-squares fit of the change in average mid."""
    dmid = np.asarray(dmid, dtype=np.float64)
    scale = float(np.std(dmid)) or 1.0
    model = RewardModel(cfg, scale=scale)
    X = model.pair(z_t, z_t1)
    Y = (dmid / scale)[:, None]
    Xv = Yv = None
    if val is not None:
        Xv = model.pair(val[0], val[1])
        Yv = (np.asarray(val[2], dtype=np.float64) / scale)[:, None]
    result = fit(model.net, X, Y, "mse", train, Xv, Yv)
    return model, result
