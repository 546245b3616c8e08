"""Layer kinds for the numpy network kernel.

Every layer keeps the cache of its most recent ``forward`` call, so a
``backward`` always refers to the last forward pass.  ``backward`` overwrites
(does not accumulate) the layer's parameter gradients and returns the
gradient with respect to the layer input.

Sequence layers use the ``(batch, time, channels)`` layout throughout.
"""
from __future__ import annotations

from typing import Any

import numpy as np

DTYPE = np.float64


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Layer:
    """Base class: no parameters, identity map."""

    kind = "identity"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad

    def config(self) -> dict[str, Any]:
        return {"kind": self.kind}

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape


class Identity(Layer):
    kind = "identity"


class Dense(Layer):
    """Affine map on the last axis; accepts any number of leading axes."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int) -> None:
        super().__init__()
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.params = {
            "W": np.zeros((self.n_in, self.n_out), dtype=DTYPE),
            "b": np.zeros(self.n_out, dtype=DTYPE),
        }

    def init_params(self, rng):
        self.params["W"] = _uniform(rng, self.n_in, (self.n_in, self.n_out))
        self.params["b"] = _uniform(rng, self.n_in, (self.n_out,))

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense expects last axis {self.n_in}, got shape {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x2 = self._x.reshape(-1, self.n_in)
        g2 = grad.reshape(-1, self.n_out)
        self.grads["W"] = x2.T @ g2
        self.grads["b"] = g2.sum(axis=0)
        return grad @ self.params["W"].T

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}

    def output_shape(self, input_shape):
        if input_shape[-1] != self.n_in:
            raise ValueError(f"dense expects last axis {self.n_in}, got {input_shape}")
        return input_shape[:-1] + (self.n_out,)


class Activation(Layer):
    """Element-wise nonlinearity, or softmax over the last axis."""

    kind = "activation"
    FUNCTIONS = ("identity", "relu", "tanh", "sigmoid", "exp", "softmax")

    def __init__(self, fn: str) -> None:
        super().__init__()
        if fn not in self.FUNCTIONS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def forward(self, x):
        fn = self.fn
        if fn == "identity":
            y = x
        elif fn == "relu":
            y = np.maximum(x, 0.0)
        elif fn == "tanh":
            y = np.tanh(x)
        elif fn == "sigmoid":
            y = sigmoid(x)
        elif fn == "exp":
            y = np.exp(x)
        else:
            y = softmax(x)
        self._x, self._y = x, y
        return y

    def backward(self, grad):
        fn, x, y = self.fn, self._x, self._y
        if fn == "identity":
            return grad
        if fn == "relu":
            return grad * (x > 0)
        if fn == "tanh":
            return grad * (1.0 - y * y)
        if fn == "sigmoid":
            return grad * y * (1.0 - y)
        if fn == "exp":
            return grad * y
        return y * (grad - (grad * y).sum(axis=-1, keepdims=True))

    def config(self):
        return {"kind": self.kind, "fn": self.fn}


class Conv1d(Layer):
    """'Same'-padded, stride-1 convolution over the time axis."""

    kind = "conv1d"

    def __init__(self, c_in: int, c_out: int, kernel: int = 5) -> None:
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("conv1d kernel must be odd for same padding")
        self.c_in, self.c_out, self.kernel = int(c_in), int(c_out), int(kernel)
        self.params = {
            "W": np.zeros((self.kernel * self.c_in, self.c_out), dtype=DTYPE),
            "b": np.zeros(self.c_out, dtype=DTYPE),
        }

    def init_params(self, rng):
        fan_in = self.kernel * self.c_in
        self.params["W"] = _uniform(rng, fan_in, (fan_in, self.c_out))
        self.params["b"] = _uniform(rng, fan_in, (self.c_out,))

    def _cols(self, x: np.ndarray) -> np.ndarray:
        pad = self.kernel // 2
        T = x.shape[1]
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        return np.concatenate([xp[:, k:k + T, :] for k in range(self.kernel)], axis=2)

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ValueError(f"conv1d expects (batch, time, {self.c_in}), got {x.shape}")
        cols = self._cols(x)
        self._cols_cache = cols
        return cols @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        cols = self._cols_cache
        B, T, _ = cols.shape
        self.grads["W"] = cols.reshape(B * T, -1).T @ grad.reshape(B * T, self.c_out)
        self.grads["b"] = grad.sum(axis=(0, 1))
        dcols = grad @ self.params["W"].T
        pad = self.kernel // 2
        dxp = np.zeros((B, T + 2 * pad, self.c_in), dtype=DTYPE)
        for k in range(self.kernel):
            dxp[:, k:k + T, :] += dcols[:, :, k * self.c_in:(k + 1) * self.c_in]
        return dxp[:, pad:pad + T, :]

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel}

    def output_shape(self, input_shape):
        if len(input_shape) != 2 or input_shape[1] != self.c_in:
            raise ValueError(f"conv1d expects (time, {self.c_in}), got {input_shape}")
        return (input_shape[0], self.c_out)


class Downsample(Layer):
    """Average pooling over non-overlapping time pairs (stride 2)."""

    kind = "downsample"

    def __init__(self, factor: int = 2) -> None:
        super().__init__()
        self.factor = int(factor)

    def forward(self, x):
        B, T, C = x.shape
        if T % self.factor:
            raise ValueError(f"time length {T} not divisible by {self.factor}")
        return x.reshape(B, T // self.factor, self.factor, C).mean(axis=2)

    def backward(self, grad):
        return np.repeat(grad, self.factor, axis=1) / self.factor

    def config(self):
        return {"kind": self.kind, "factor": self.factor}

    def output_shape(self, input_shape):
        T, C = input_shape
        if T % self.factor:
            raise ValueError(f"time length {T} not divisible by {self.factor}")
        return (T // self.factor, C)


class Upsample(Layer):
    """Nearest-neighbour repeat along time."""

    kind = "upsample"

    def __init__(self, factor: int = 2) -> None:
        super().__init__()
        self.factor = int(factor)

    def forward(self, x):
        return np.repeat(x, self.factor, axis=1)

    def backward(self, grad):
        B, T, C = grad.shape
        return grad.reshape(B, T // self.factor, self.factor, C).sum(axis=2)

    def config(self):
        return {"kind": self.kind, "factor": self.factor}

    def output_shape(self, input_shape):
        T, C = input_shape
        return (T * self.factor, C)


class Reshape(Layer):
    """Reshape the per-sample axes; the batch axis is kept."""

    kind = "reshape"

    def __init__(self, shape: tuple[int, ...] | list[int]) -> None:
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in_shape)

    def config(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {input_shape} to {self.shape}")
        return self.shape


class LSTM(Layer):
    """Single-layer LSTM over ``(batch, time, n_in)``.

    Returns the full hidden sequence when ``return_sequences`` is set,
    otherwise only the last hidden state.  Gate order in the fused weight
    matrix is input, forget, cell, output.
    """

    kind = "lstm"

    def __init__(self, n_in: int, n_hidden: int, return_sequences: bool = False) -> None:
        super().__init__()
        self.n_in, self.n_hidden = int(n_in), int(n_hidden)
        self.return_sequences = bool(return_sequences)
        H = self.n_hidden
        self.params = {
            "W": np.zeros((self.n_in + H, 4 * H), dtype=DTYPE),
            "b": np.zeros(4 * H, dtype=DTYPE),
        }

    def init_params(self, rng):
        H = self.n_hidden
        self.params["W"] = _uniform(rng, H, (self.n_in + H, 4 * H))
        b = _uniform(rng, H, (4 * H,))
        b[H:2 * H] += 1.0  # forget-gate bias
        self.params["b"] = b

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValueError(f"lstm expects (batch, time, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        H = self.n_hidden
        W, b = self.params["W"], self.params["b"]
        h = np.zeros((B, H), dtype=DTYPE)
        c = np.zeros((B, H), dtype=DTYPE)
        hs = np.empty((B, T, H), dtype=DTYPE)
        cache = []
        for t in range(T):
            xh = np.concatenate([x[:, t, :], h], axis=1)
            z = xh @ W + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t, :] = h
            cache.append((xh, i, f, g, o, c_prev, tc))
        self._cache = cache
        return hs if self.return_sequences else h

    def backward(self, grad):
        cache = self._cache
        T = len(cache)
        H = self.n_hidden
        W = self.params["W"]
        B = cache[0][0].shape[0]
        if self.return_sequences:
            dhs = grad
        else:
            dhs = np.zeros((B, T, H), dtype=DTYPE)
            dhs[:, -1, :] = grad
        dW = np.zeros_like(W)
        db = np.zeros(4 * H, dtype=DTYPE)
        dx = np.empty((B, T, self.n_in), dtype=DTYPE)
        dh_next = np.zeros((B, H), dtype=DTYPE)
        dc_next = np.zeros((B, H), dtype=DTYPE)
        for t in reversed(range(T)):
            xh, i, f, g, o, c_prev, tc = cache[t]
            dh = dhs[:, t, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dx[:, t, :] = dxh[:, :self.n_in]
            dh_next = dxh[:, self.n_in:]
            dc_next = dc * f
        self.grads["W"] = dW
        self.grads["b"] = db
        return dx

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_hidden": self.n_hidden,
                "return_sequences": self.return_sequences}

    def output_shape(self, input_shape):
        if len(input_shape) != 2 or input_shape[1] != self.n_in:
            raise ValueError(f"lstm expects (time, {self.n_in}), got {input_shape}")
        if self.return_sequences:
            return (input_shape[0], self.n_hidden)
        return (self.n_hidden,)


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls
    for cls in (Identity, Dense, Activation, Conv1d, Downsample, Upsample, Reshape, LSTM)
}


def layer_from_config(cfg: dict[str, Any]) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**cfg)
