"""Central-difference gradient checking for :class:`Network` objects."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .network import Network

ScalarLoss = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def projection_loss(shape: tuple[int, ...], seed: int = 0) -> ScalarLoss:
    """Scalar loss ``sum(out * R)`` with a fixed random ``R``; exercises every output."""
    R = np.random.default_rng(seed).standard_normal(shape)

    def loss(out: np.ndarray) -> tuple[float, np.ndarray]:
        return float((out * R).sum()), R

    return loss


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def grad_check(net: Network, x: np.ndarray, epsilon: float = 1e-5,
               loss: ScalarLoss | None = None, max_checks: int | None = None,
               seed: int = 0, check_input: bool = False) -> float:
    """Largest relative error between backprop and central differences.

    ``loss`` maps the network output to ``(value, d value / d output)``; the
    default is a fixed random projection.  ``max_checks`` limits the number of
    entries probed per parameter array (sampled with ``seed``); ``None`` probes
    every entry.
    """
    x = np.asarray(x, dtype=np.float64)
    out = net.forward(x)
    if loss is None:
        loss = projection_loss(out.shape, seed)
    _, dout = loss(out)
    dx = net.backward(dout)
    analytic = {name: g.copy() for name, g in net.named_grads()}

    def value() -> float:
        return loss(net.forward(x))[0]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in net.named_params():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = rng.choice(flat.size, size=max_checks, replace=False)
        g = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = value()
            flat[i] = orig - epsilon
            fm = value()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * epsilon)
            worst = max(worst, float(relative_error(g[i], fd)))
    if check_input:
        xf = x.reshape(-1)
        gx = dx.reshape(-1)
        idx = np.arange(xf.size)
        if max_checks is not None and xf.size > max_checks:
            idx = rng.choice(xf.size, size=max_checks, replace=False)
        for i in idx:
            orig = xf[i]
            xf[i] = orig + epsilon
            fp = value()
            xf[i] = orig - epsilon
            fm = value()
            xf[i] = orig
            worst = max(worst, float(relative_error(gx[i], (fp - fm) / (2.0 * epsilon))))
    return worst
