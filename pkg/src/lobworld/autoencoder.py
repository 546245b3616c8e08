"""Convolutional autoencoder compressing normalized ``W x 4L`` windows to ``m`` latents."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import N_LEVELS, TICKS_PER_STATE, LobWindow
from .nn import FitResult, Network, NetworkSpec, TrainConfig, fit, load_checkpoint, save_checkpoint

LATENT_DIM = 16


@dataclass(frozen=True)
class AEConfig:
    window: int = TICKS_PER_STATE
    n_features: int = 4 * N_LEVELS
    latent_dim: int = LATENT_DIM
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 5
    activation: str = "tanh"
    latent_activation: str = "tanh"
    variational: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.variational:
            raise NotImplementedError("only the deterministic autoencoder is implemented")
        if self.window % (2 ** len(self.channels)):
            raise ValueError(f"window {self.window} must be divisible by {2 ** len(self.channels)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(z)):
            raise ValueError("latent state must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    def __eq__(self, other):
        return isinstance(other, LatentState) and np.array_equal(self.z, other.z)

    __hash__ = None


def _layers(cfg: AEConfig) -> tuple[list[dict], list[dict]]:
    enc: list[dict] = []
    c_prev = cfg.n_features
    for c in cfg.channels:
        enc += [{"kind": "conv1d", "c_in": c_prev, "c_out": c, "kernel": cfg.kernel},
                {"kind": "activation", "fn": cfg.activation},
                {"kind": "downsample", "factor": 2}]
        c_prev = c
    t_small = cfg.window // 2 ** len(cfg.channels)
    flat = t_small * c_prev
    enc += [{"kind": "reshape", "shape": [flat]},
            {"kind": "dense", "n_in": flat, "n_out": cfg.latent_dim},
            {"kind": "activation", "fn": cfg.latent_activation}]
    dec: list[dict] = [{"kind": "dense", "n_in": cfg.latent_dim, "n_out": flat},
                       {"kind": "activation", "fn": cfg.activation},
                       {"kind": "reshape", "shape": [t_small, c_prev]}]
    outs = list(reversed(cfg.channels[:-1])) + [cfg.n_features]
    for i, c in enumerate(outs):
        dec += [{"kind": "upsample", "factor": 2},
                {"kind": "conv1d", "c_in": c_prev, "c_out": c, "kernel": cfg.kernel},
                {"kind": "activation", "fn": "sigmoid" if i == len(outs) - 1 else cfg.activation}]
        c_prev = c
    return enc, dec


def autoencoder_spec(cfg: AEConfig) -> tuple[NetworkSpec, int]:
    enc, dec = _layers(cfg)
    spec = NetworkSpec((cfg.window, cfg.n_features), tuple(enc + dec), cfg.seed)
    return spec, len(enc)


class AutoEncoder:
    """Encoder and decoder stored as one network split at the bottleneck."""

    def __init__(self, cfg: AEConfig = AEConfig(), net: Network | None = None):
        self.cfg = cfg
        spec, self.n_encoder_layers = autoencoder_spec(cfg)
        self.net = net if net is not None else Network(spec)
        if (self.net.spec.layers, self.net.spec.input_shape) != (spec.layers, spec.input_shape):
            raise ValueError("network does not match the autoencoder config")

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def _run(self, x: np.ndarray, layers) -> np.ndarray:
        for layer in layers:
            x = layer.forward(x)
        return x

    def encode_batch(self, windows: np.ndarray) -> np.ndarray:
        x = np.asarray(windows, dtype=np.float64)
        if x.shape[1:] != (self.cfg.window, self.cfg.n_features):
            raise ValueError(f"expected windows of shape (n, {self.cfg.window}, "
                             f"{self.cfg.n_features}), got {x.shape}")
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("encoder input must be min-max normalized")
        return self._run(x, self.net.layers[:self.n_encoder_layers])

    def decode_batch(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, self.cfg.latent_dim)
        return self._run(z, self.net.layers[self.n_encoder_layers:])

    def encode(self, window: LobWindow) -> LatentState:
        if not window.normalized:
            raise ValueError("encode requires a normalized window")
        return LatentState(self.encode_batch(window.features[None])[0])

    def decode(self, z: LatentState | np.ndarray) -> np.ndarray:
        vec = z.z if isinstance(z, LatentState) else np.asarray(z)
        if not np.all(np.isfinite(vec)):
            raise ValueError("latent must be finite")
        return self.decode_batch(vec)[0]

    def reconstruction_mse(self, windows: np.ndarray) -> float:
        if len(windows) == 0:
            return float("nan")
        total = 0.0
        for start in range(0, len(windows), 512):
            xb = windows[start:start + 512]
            total += float(((self.net.forward(xb) - xb) ** 2).sum())
        return total / np.asarray(windows).size

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(path, {"autoencoder": self.net},
                        {"ae_config": self.cfg.to_dict(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> "AutoEncoder":
        nets, extra = load_checkpoint(path)
        cfg = AEConfig(**extra["ae_config"])
        return cls(cfg, nets["autoencoder"])


@dataclass
class AETrainingReport:
    fit: FitResult
    initial_val_mse: float
    final_val_mse: float
    val_mse_per_epoch: list[float] = field(default_factory=list)


def train_ae(windows: np.ndarray, cfg: AEConfig = AEConfig(),
             train: TrainConfig = TrainConfig(), val_windows: np.ndarray | None = None,
             ) -> tuple[AutoEncoder, AETrainingReport]:
    """Fit the autoencoder on normalized windows with a mean-squared-error loss.

    The returned model holds the best-validation parameters.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if len(windows) == 0:
        raise ValueError("need at least one window")
    ae = AutoEncoder(cfg)
    if val_windows is None:
        val_windows = windows
    result = fit(ae.net, windows, windows, "mse", train, val_windows, val_windows)
    report = AETrainingReport(result, result.initial_val, ae.reconstruction_mse(val_windows),
                              list(result.val_loss))
    return ae, report
