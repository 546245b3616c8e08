"""Recurrent mixture-density transition model over latent states.

Each input step concatenates the latent ``z`` (m values), the signed action
quantity scaled by the maximum quantity (1 value), and a mean-pooled fixed
linear embedding of the trade context (8 values).  The LSTM runs over a
history of ``N`` steps and a dense head emits, for every step, a diagonal
Gaussian mixture over the next latent.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import QTY_MAX, TRADE_FEATURES, TradeContext, Transition, normalize_window
from .nn import (FitResult, Network, NetworkSpec, TrainConfig, fit, load_checkpoint, logsumexp,
                 mdn_nll, mdn_split, save_checkpoint, softmax)
from .nn.losses import LOG_2PI

N_COMPONENTS = 5
RNN_UNITS = 128
SEQ_LEN = 10
CONTEXT_EMBED_DIM = 8


@dataclass(frozen=True, eq=False)
class MixtureParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim == 1:
            mu, var = mu[:, None], var.reshape(-1, 1)
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise ValueError("weights (K,), means (K, m) and variances (K, m) must agree")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must lie on the simplex")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def component_log_densities(means, variances, z) -> np.ndarray:
    """log N(z; mu_k, diag var_k) for each component (last two axes K, m)."""
    z = np.asarray(z, dtype=np.float64)[..., None, :]
    return -0.5 * (means.shape[-1] * LOG_2PI + np.log(variances).sum(-1)
                   + ((z - means) ** 2 / variances).sum(-1))


def log_likelihood(params: MixtureParams, z_next) -> float:
    """Log mixture density at ``z_next``, stabilised with log-sum-exp."""
    z = np.asarray(getattr(z_next, "z", z_next), dtype=np.float64).reshape(-1)
    if z.size != params.dim:
        raise ValueError(f"expected a {params.dim}-dim point")
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return float(logsumexp(log_w + component_log_densities(params.means, params.variances, z)))


def _tempered(logits: np.ndarray, log_var: np.ndarray, temperature: float):
    weights = softmax(logits / temperature)
    variances = np.exp(log_var) * temperature
    return weights, variances


def sample_arrays(weights: np.ndarray, means: np.ndarray, variances: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Batched draw: pick one component per row by weight, then a Gaussian point."""
    B, K, m = means.shape
    u = rng.random(B)
    k = (np.cumsum(weights, axis=1) < u[:, None]).sum(axis=1).clip(max=K - 1)
    eps = rng.standard_normal((B, m))
    rows = np.arange(B)
    return means[rows, k] + np.sqrt(variances[rows, k]) * eps


def sample(params: MixtureParams, temperature: float = 1.0,
           rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``z ~ N(mu_k, temperature * var_k)`` with ``k`` from the mixture weights.

    Temperature also sharpens the weights (``w_k^(1/T)`` renormalised), so as
    ``T -> 0`` the draw collapses to the mean of the heaviest component; at
    ``T = 1`` the weights are used unchanged.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    with np.errstate(divide="ignore"):
        logits = np.log(params.weights)
    w = softmax(logits / temperature)
    return sample_arrays(w[None], params.means[None], params.variances[None] * temperature,
                         rng)[0]


# ----------------------------------------------------------------------------- inputs

def context_projection(seed: int = 0) -> np.ndarray:
    """Fixed (untrained) trade-feature -> embedding map."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(TRADE_FEATURES, CONTEXT_EMBED_DIM))


_PROJECTION = context_projection()


def embed_context_arrays(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean over real slots of the projected trade features; zeros when empty."""
    proj = features @ _PROJECTION
    m = mask.astype(np.float64)[..., None]
    count = m.sum(axis=-2)
    return (proj * m).sum(axis=-2) / np.maximum(count, 1.0)


def embed_context(ctx: TradeContext) -> np.ndarray:
    return embed_context_arrays(ctx.features, ctx.mask)


def action_feature(signed_quantity) -> np.ndarray:
    return np.asarray(signed_quantity, dtype=np.float64) / QTY_MAX


def step_inputs(z: np.ndarray, signed_quantity, context_embedding: np.ndarray) -> np.ndarray:
    """Concatenate one (z, a, u) step along the last axis (broadcasting a and u)."""
    z = np.asarray(z, dtype=np.float64)
    lead = z.shape[:-1]
    a = np.broadcast_to(action_feature(signed_quantity), lead)[..., None]
    u = np.broadcast_to(np.asarray(context_embedding, dtype=np.float64),
                        lead + (CONTEXT_EMBED_DIM,))
    return np.concatenate([z, a, u], axis=-1)


# ----------------------------------------------------------------------------- model

@dataclass(frozen=True)
class TransitionConfig:
    latent_dim: int = 16
    n_components: int = N_COMPONENTS
    hidden: int = RNN_UNITS
    seq_len: int = SEQ_LEN
    context_dim: int = CONTEXT_EMBED_DIM
    temperature: float = 1.0
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.latent_dim + 1 + self.context_dim

    def to_dict(self) -> dict:
        return asdict(self)


class TransitionModel:
    def __init__(self, cfg: TransitionConfig = TransitionConfig(), net: Network | None = None):
        self.cfg = cfg
        K, m = cfg.n_components, cfg.latent_dim
        spec = NetworkSpec((cfg.seq_len, cfg.input_dim), (
            {"kind": "lstm", "n_in": cfg.input_dim, "n_hidden": cfg.hidden,
             "return_sequences": True},
            {"kind": "dense", "n_in": cfg.hidden, "n_out": K * (2 * m + 1)},
        ), cfg.seed)
        self.net = net if net is not None else Network(spec)

    def raw(self, histories: np.ndarray) -> np.ndarray:
        """Head outputs for every step: ``(B, N, K(2m+1))``."""
        return self.net.forward(histories)

    def predict_arrays(self, histories: np.ndarray):
        """Mixture for the step after each history: weights, means, variances."""
        histories = np.asarray(histories, dtype=np.float64)
        if histories.ndim != 3 or histories.shape[1] != self.cfg.seq_len:
            raise ValueError(f"history must have length {self.cfg.seq_len}, "
                             f"got shape {histories.shape}")
        raw = self.raw(histories)[:, -1, :]
        logits, means, log_var = mdn_split(raw, self.cfg.n_components, self.cfg.latent_dim)
        return softmax(logits), means, np.exp(log_var)

    def predict(self, history) -> MixtureParams:
        """Mixture over ``z_{N+1}`` from ``N`` (z, a, u) steps.

        ``history`` is an ``(N, input_dim)`` array or a sequence of
        ``(z, signed_quantity, context_embedding)`` tuples.
        """
        if not isinstance(history, np.ndarray):
            history = np.stack([step_inputs(z, a, u) for z, a, u in history])
        if len(history) != self.cfg.seq_len:
            raise ValueError(f"history must have length {self.cfg.seq_len}, got {len(history)}")
        w, mu, var = self.predict_arrays(history[None])
        return MixtureParams(w[0], mu[0], var[0])

    def sample_next(self, histories: np.ndarray, rng: np.random.Generator,
                    temperature: float | None = None) -> np.ndarray:
        T = self.cfg.temperature if temperature is None else temperature
        raw = self.raw(np.asarray(histories, dtype=np.float64))[:, -1, :]
        logits, means, log_var = mdn_split(raw, self.cfg.n_components, self.cfg.latent_dim)
        w, var = _tempered(logits, log_var, T)
        return sample_arrays(w, means, var, rng)

    def nll(self, histories: np.ndarray, targets: np.ndarray) -> float:
        return mdn_nll(self.raw(histories), targets, self.cfg.n_components,
                       self.cfg.latent_dim)[0]

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(path, {"transition": self.net},
                        {"transition_config": self.cfg.to_dict(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> "TransitionModel":
        nets, extra = load_checkpoint(path)
        return cls(TransitionConfig(**extra["transition_config"]), nets["transition"])


def mixture_loss(cfg: TransitionConfig):
    def loss(raw, target):
        return mdn_nll(raw, target, cfg.n_components, cfg.latent_dim)
    return loss


def train_mdn(histories: np.ndarray, targets: np.ndarray,
              cfg: TransitionConfig = TransitionConfig(), train: TrainConfig = TrainConfig(),
              val_histories: np.ndarray | None = None, val_targets: np.ndarray | None = None,
              ) -> tuple[TransitionModel, FitResult]:
    """Teacher-forced fit: every step's output is scored against its true next latent."""
    model = TransitionModel(cfg)
    result = fit(model.net, np.asarray(histories, dtype=np.float64),
                 np.asarray(targets, dtype=np.float64), mixture_loss(cfg), train,
                 val_histories, val_targets)
    return model, result


# ----------------------------------------------------------------------------- corpus

def latent_transition_rows(transitions: Sequence[Transition], encoder) -> tuple[
        np.ndarray, np.ndarray]:
    """Per-transition model inputs ``(n, input_dim)`` and next latents ``(n, m)``."""
    if not transitions:
        return np.zeros((0, 0)), np.zeros((0, 0))
    cur = np.stack([normalize_window(t.state.window).features for t in transitions])
    nxt = np.stack([normalize_window(t.next_state.window).features for t in transitions])
    z = encoder.encode_batch(cur)
    z_next = encoder.encode_batch(nxt)
    emb = np.stack([embed_context(t.state.context) for t in transitions])
    acts = np.array([t.action.signed_quantity for t in transitions], dtype=np.float64)
    return step_inputs(z, acts, emb), z_next


def make_sequences(inputs: np.ndarray, targets: np.ndarray, seq_len: int = SEQ_LEN,
                   stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Chop one day's ordered rows into overlapping length-``seq_len`` sequences."""
    n = len(inputs)
    starts = np.arange(0, n - seq_len + 1, stride)
    if starts.size == 0:
        return (np.zeros((0, seq_len, inputs.shape[-1] if inputs.ndim == 2 else 0)),
                np.zeros((0, seq_len, targets.shape[-1] if targets.ndim == 2 else 0)))
    idx = starts[:, None] + np.arange(seq_len)[None, :]
    return inputs[idx], targets[idx]

