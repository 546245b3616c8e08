"""Declarative run configuration (JSON), validated section by section.

Unknown keys are rejected at every level so that typos fail loudly instead
of silently falling back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .synthetic import REGIMES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSection:
    lr: float = 3e-3
    batch_size: int = 32
    epochs: int = 40
    patience: int = 10
    clip_norm: float = 5.0


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"          # "synthetic" or a dataset directory
    n_ticks: int = 12000
    train: tuple[str, ...] = ("ascending", "descending")
    validation: tuple[str, ...] = ("oscillating",)
    test: tuple[str, ...] = ("ascending",)
    drift: float = 0.002
    noise: float = 0.004
    osc_amplitude: float = 0.6
    osc_period: int = 800
    trade_rate: float = 0.05
    impact: float = 0.0


@dataclass(frozen=True)
class LobSection:
    W: int = 40
    U: int = 10
    L: int = 3


@dataclass(frozen=True)
class AESection:
    m: int = 16
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 5
    activation: str = "tanh"
    stride: int = 10
    train: TrainSection = TrainSection()


@dataclass(frozen=True)
class TransitionSection:
    N: int = 10
    K: int = 5
    rnn_units: int = 128
    temperature: float = 1.0
    offsets: tuple[int, ...] = (0, 10, 20, 30)
    train: TrainSection = TrainSection(epochs=20, patience=4)


@dataclass(frozen=True)
class RewardSection:
    reward_lstm: int = 128
    reward_dense: int = 40
    po_max: int = 1000
    fees: float = 0.02
    squash_range: tuple[float, float] = (-6.0, 6.0)
    train: TrainSection = TrainSection(epochs=30, patience=5)


@dataclass(frozen=True)
class AgentSection:
    kinds: tuple[str, ...] = ("pg",)
    actions: int = 21
    H: int = 500
    gamma: float = 0.99
    lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 128)
    iterations: int = 60
    episodes_per_iteration: int = 16
    patience: int = 15
    target_period: int = 500
    updates_per_iteration: int = 200
    epsilon_decay_iterations: int = 30


@dataclass(frozen=True)
class BenchmarkSection:
    alpha: float = 0.01
    aggressive: int = 1000
    conservative: int = 100
    bfs_horizon: int = 4
    bfs_actions: tuple[int, ...] = (-1000, -100, 0, 100, 1000)
    classifier: TrainSection = TrainSection(lr=1e-3, epochs=15, patience=4)


@dataclass(frozen=True)
class EvaluationSection:
    max_states: int = 300
    regime_window: int = 1000
    regime_threshold: float = 1.0
    compare_days: int = 5
    compare_horizon: int = 100
    compare_samples: int = 8


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataSection = DataSection()
    lob: LobSection = LobSection()
    autoencoder: AESection = AESection()
    transition: TransitionSection = TransitionSection()
    reward: RewardSection = RewardSection()
    agent: AgentSection = AgentSection()
    benchmark: BenchmarkSection = BenchmarkSection()
    evaluation: EvaluationSection = EvaluationSection()

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def section(self, *names: str) -> dict:
        d = self.to_dict()
        return {n: d[n] for n in names}

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        tp = hints[name]
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, key)
        elif typing.get_origin(tp) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key}: expected a list")
            elem = typing.get_args(tp)[0]
            kwargs[name] = tuple(_coerce(elem, v, key) for v in value)
        else:
            kwargs[name] = _coerce(tp, value, key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _coerce(tp, value, key):
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if tp is str and isinstance(value, str):
        return value
    if tp is bool and isinstance(value, bool):
        return value
    raise ConfigError(f"{key}: expected {tp.__name__}, got {value!r}")


def validate(cfg: RunConfig) -> None:
    problems = []
    d = cfg.data
    for split in ("train", "validation", "test"):
        bad = [r for r in getattr(d, split) if r not in REGIMES]
        if bad:
            problems.append(f"data.{split}: unknown regime(s) {bad}")
    if d.source == "synthetic" and not d.train:
        problems.append("data.train must list at least one day")
    if d.n_ticks < 2 * cfg.lob.W:
        problems.append("data.n_ticks must be at least 2W")
    if cfg.lob.W % 2 ** len(cfg.autoencoder.channels):
        problems.append("lob.W must be divisible by 2**len(autoencoder.channels)")
    if cfg.agent.actions != 21:
        problems.append("agent.actions is fixed at 21")
    if not set(cfg.agent.kinds) <= {"dqn", "pg", "a2c"} or not cfg.agent.kinds:
        problems.append("agent.kinds must be a non-empty subset of dqn, pg, a2c")
    if not 0 < cfg.agent.gamma <= 1:
        problems.append("agent.gamma must lie in (0, 1]")
    if cfg.reward.po_max <= 0 or cfg.reward.fees < 0:
        problems.append("reward.po_max must be positive and reward.fees non-negative")
    lo, hi = cfg.reward.squash_range if len(cfg.reward.squash_range) == 2 else (0, 0)
    if not hi > lo:
        problems.append("reward.squash_range must be [lo, hi] with hi > lo")
    for q in (cfg.benchmark.aggressive, cfg.benchmark.conservative):
        if q <= 0 or q > 1000 or q % 100:
            problems.append("benchmark quantities must be in 100..1000 step 100")
    if cfg.benchmark.bfs_horizon > 6 or len(cfg.benchmark.bfs_actions) > 5:
        problems.append("bfs is limited to horizon <= 6 and <= 5 actions")
    if problems:
        raise ConfigError("; ".join(problems))


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(raw)
