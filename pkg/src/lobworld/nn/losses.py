"""Loss functions returning ``(mean loss, gradient w.r.t. the prediction)``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import softmax

LOG_2PI = float(np.log(2.0 * np.pi))

LossFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Categorical cross-entropy from raw logits and integer class labels."""
    labels = np.asarray(labels).astype(int).reshape(-1)
    flat = logits.reshape(len(labels), -1)
    log_p = flat - logsumexp(flat)[:, None]
    n = len(labels)
    loss = -log_p[np.arange(n), labels].mean()
    grad = softmax(flat)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).reshape(logits.shape)


def mdn_split(raw: np.ndarray, n_components: int, dim: int):
    """Split a raw head output into (logits, means, log-variances)."""
    K, m = n_components, dim
    if raw.shape[-1] != K * (2 * m + 1):
        raise ValueError(f"mixture head width {raw.shape[-1]} != K*(2m+1) = {K * (2 * m + 1)}")
    lead = raw.shape[:-1]
    logits = raw[..., :K]
    means = raw[..., K:K + K * m].reshape(lead + (K, m))
    log_var = raw[..., K + K * m:].reshape(lead + (K, m))
    return logits, means, log_var


def mdn_nll(raw: np.ndarray, target: np.ndarray, n_components: int,
            dim: int) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``target`` under a diagonal Gaussian mixture."""
    K, m = n_components, dim
    logits, means, log_var = mdn_split(raw, K, m)
    t = target[..., None, :]
    inv_var = np.exp(-log_var)
    sq = (t - means) ** 2 * inv_var
    log_comp = -0.5 * (m * LOG_2PI + log_var.sum(-1) + sq.sum(-1))
    log_w = logits - logsumexp(logits)[..., None]
    joint = log_w + log_comp
    lse = logsumexp(joint)
    n = lse.size
    loss = -lse.sum() / n

    resp = np.exp(joint - lse[..., None])
    w = np.exp(log_w)
    d_logits = (w - resp) / n
    d_means = -(resp[..., None] * (t - means) * inv_var) / n
    d_logvar = 0.5 * resp[..., None] * (1.0 - sq) / n
    lead = raw.shape[:-1]
    grad = np.concatenate([d_logits, d_means.reshape(lead + (K * m,)),
                           d_logvar.reshape(lead + (K * m,))], axis=-1)
    return float(loss), grad


def resolve_loss(kind: str | LossFn) -> LossFn:
    if callable(kind):
        return kind
    if kind == "mse":
        return mse
    if kind in ("xent", "cross_entropy", "softmax_cross_entropy"):
        return softmax_cross_entropy
    raise ValueError(f"unknown loss kind {kind!r}")
