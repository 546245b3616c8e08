"""Sequential networks, their declarative specs, and JSON checkpoints."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .layers import DTYPE, Layer, layer_from_config

CHECKPOINT_FORMAT = "lobworld-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptors plus the per-sample input shape and init seed."""

    input_shape: tuple[int, ...]
    layers: tuple[dict[str, Any], ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        self.output_shape()  # raises if adjacent layers do not compose

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for cfg in self.layers:
            shape = layer_from_config(cfg).output_shape(shape)
        return shape

    def to_dict(self) -> dict[str, Any]:
        return {"input_shape": list(self.input_shape),
                "layers": [dict(l) for l in self.layers],
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(d["layers"]), int(d.get("seed", 0)))


class Network:
    """A stack of layers applied in order."""

    def __init__(self, spec: NetworkSpec, init: bool = True):
        self.spec = spec
        self.layers: list[Layer] = [layer_from_config(cfg) for cfg in spec.layers]
        if init:
            rng = np.random.default_rng(spec.seed)
            for layer in self.layers:
                layer.init_params(rng)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(
                f"input shape {x.shape[1:]} does not match network input {self.spec.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", layer.params[k])
                for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for k in sorted(layer.params):
                g = layer.grads.get(k)
                out.append((f"{i}.{k}", np.zeros_like(layer.params[k]) if g is None else g))
        return out

    def params(self) -> list[np.ndarray]:
        return [p for _, p in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        return [g for _, g in self.named_grads()]

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.grads = {k: np.zeros_like(v) for k, v in layer.params.items()}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.named_params()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                value = np.asarray(state[f"{i}.{k}"], dtype=DTYPE)
                if value.shape != layer.params[k].shape:
                    raise ValueError(f"shape mismatch for {i}.{k}")
                layer.params[k][...] = value  # in place: optimizers hold references

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def to_dict(self, extra: dict[str, Any] | None = None) -> dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "params": [{"name": n, "shape": list(p.shape), "values": p.ravel().tolist()}
                       for n, p in self.named_params()],
            "extra": extra or {},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Network":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a lobworld checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        net = cls(NetworkSpec.from_dict(d["spec"]), init=False)
        net.set_state({p["name"]: np.asarray(p["values"], dtype=DTYPE).reshape(p["shape"])
                       for p in d["params"]})
        return net


def save_checkpoint(path: str | Path, networks: dict[str, Network],
                    extra: dict[str, Any] | None = None) -> None:
    """Write one or more named networks plus free-form metadata as JSON.

    Python's float repr round-trips, so reloads are bit-exact.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "networks": {name: net.to_dict() for name, net in networks.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Network], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a lobworld checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    nets = {name: Network.from_dict(d) for name, d in payload["networks"].items()}
    return nets, payload.get("extra", {})
