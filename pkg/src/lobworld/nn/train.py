"""Mini-batch training loop with validation tracking and early stopping."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import LossFn, resolve_loss
from .network import Network
from .optim import clip_global_norm, make_optimizer


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    patience: int = 5
    clip_norm: float | None = 5.0
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0 or self.patience <= 0:
            raise ValueError(f"invalid training config: {self}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_val: list[float] = field(default_factory=list)
    best_epoch: int = -1
    initial_val: float = float("nan")
    stopped_early: bool = False


def evaluate_loss(net: Network, X: np.ndarray, Y: np.ndarray, loss: LossFn,
                  batch_size: int = 512) -> float:
    total, n = 0.0, len(X)
    for start in range(0, n, batch_size):
        xb, yb = X[start:start + batch_size], Y[start:start + batch_size]
        total += loss(net.forward(xb), yb)[0] * len(xb)
    return total / max(n, 1)


def fit(net: Network, X: np.ndarray, Y: np.ndarray, loss: str | LossFn = "mse",
        config: TrainConfig = TrainConfig(), X_val: np.ndarray | None = None,
        Y_val: np.ndarray | None = None) -> FitResult:
    """Train ``net`` in place and leave it at the best-validation parameters.

    Without a validation set the training loss drives early stopping.
    """
    loss_fn = resolve_loss(loss)
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, net.params(), config.lr)
    has_val = X_val is not None and Y_val is not None and len(X_val) > 0
    result = FitResult()

    def current_val() -> float:
        return evaluate_loss(net, X_val, Y_val, loss_fn) if has_val else evaluate_loss(
            net, X, Y, loss_fn)

    best = current_val()
    result.initial_val = best
    best_state = net.get_state()
    since_best = 0
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out = net.forward(X[idx])
            value, dout = loss_fn(out, Y[idx])
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            net.backward(dout)
            grads = net.grads()
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            total += value * len(idx)
        result.train_loss.append(total / n)
        val = current_val()
        if not np.isfinite(val):
            raise TrainingDiverged(epoch, val)
        result.val_loss.append(val)
        if val < best:
            best, best_state, since_best = val, net.get_state(), 0
            result.best_epoch = epoch
        else:
            since_best += 1
        result.best_val.append(best)
        if since_best >= config.patience:
            result.stopped_early = True
            break
    net.set_state(best_state)
    return result
