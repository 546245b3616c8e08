"""Baseline strategies: momentum, movement classifier, greedy with future knowledge, BFS oracle."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics import precision_recall_fscore_support

from .data import N_LEVELS, TICKS_PER_STATE, LobWindow
from .nn import (FitResult, Network, NetworkSpec, TrainConfig, fit, load_checkpoint,
                 save_checkpoint, softmax)
from .reward import FEE_RATE, PO_MAX, clamp_positions
from .world import N_ACTIONS, action_quantities

MOVEMENT_LABELS = ("down", "no_change", "up")
DEFAULT_ALPHA = 0.01          # one price tick of the synthetic instrument
AGGRESSIVE_QTY = 1000
CONSERVATIVE_QTY = 100
ALL_QUANTITIES = tuple(int(q) for q in action_quantities(np.arange(N_ACTIONS)))


@dataclass(frozen=True)
class MovementClass:
    label: str
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.label not in MOVEMENT_LABELS:
            raise ValueError(f"unknown movement label {self.label!r}")

    @property
    def index(self) -> int:
        return MOVEMENT_LABELS.index(self.label)


def classify_move(delta: float, alpha: float = DEFAULT_ALPHA) -> MovementClass:
    if delta > alpha:
        return MovementClass("up", alpha)
    if delta < -alpha:
        return MovementClass("down", alpha)
    return MovementClass("no_change", alpha)


def movement_labels(deltas, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Vectorised label indices (0 down, 1 no_change, 2 up)."""
    d = np.asarray(deltas, dtype=np.float64)
    return np.where(d > alpha, 2, np.where(d < -alpha, 0, 1))


def momentum_signal(window: LobWindow, alpha: float = DEFAULT_ALPHA) -> MovementClass:
    """Closing mid (last tick) minus opening mid (first tick), against ``alpha``."""
    if window.normalized:
        raise ValueError("momentum needs raw prices")
    return classify_move(float(window.mids[-1] - window.mids[0]), alpha)


def momentum_policy(signal: MovementClass, q_fixed: int) -> int:
    """Buy ``q_fixed`` on up, sell on down, nothing otherwise."""
    if q_fixed not in ALL_QUANTITIES or q_fixed <= 0:
        raise ValueError(f"q_fixed must be a positive action quantity, got {q_fixed}")
    return {"up": q_fixed, "down": -q_fixed, "no_change": 0}[signal.label]


# ----------------------------------------------------------------------------- classifier

@dataclass(frozen=True)
class ClassifierConfig:
    window: int = TICKS_PER_STATE
    n_features: int = 4 * N_LEVELS
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 5
    dense: int = 64
    alpha: float = DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def classifier_spec(cfg: ClassifierConfig) -> NetworkSpec:
    layers: list[dict] = []
    prev = cfg.n_features
    for c in cfg.channels:
        layers += [{"kind": "conv1d", "c_in": prev, "c_out": c, "kernel": cfg.kernel},
                   {"kind": "activation", "fn": "relu"}]
        prev = c
    flat = cfg.window * prev
    layers += [{"kind": "reshape", "shape": [flat]},
               {"kind": "dense", "n_in": flat, "n_out": cfg.dense},
               {"kind": "activation", "fn": "relu"},
               {"kind": "dense", "n_in": cfg.dense, "n_out": len(MOVEMENT_LABELS)}]
    return NetworkSpec((cfg.window, cfg.n_features), tuple(layers), cfg.seed)


class MovementClassifier:
    """Three 1-D convolutions, a 64-unit dense layer and a softmax over down/no_change/up."""

    def __init__(self, cfg: ClassifierConfig = ClassifierConfig(), net: Network | None = None):
        self.cfg = cfg
        self.net = net if net is not None else Network(classifier_spec(cfg))

    def predict_proba(self, windows: np.ndarray) -> np.ndarray:
        out = [softmax(self.net.forward(windows[i:i + 512]))
               for i in range(0, len(windows), 512)]
        return np.concatenate(out) if out else np.zeros((0, len(MOVEMENT_LABELS)))

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return self.predict_proba(windows).argmax(axis=1)

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        save_checkpoint(path, {"classifier": self.net},
                        {"classifier_config": self.cfg.to_dict(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> "MovementClassifier":
        nets, extra = load_checkpoint(path)
        return cls(ClassifierConfig(**extra["classifier_config"]), nets["classifier"])


@dataclass
class ClassificationReport:
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    accuracy: float
    labels: tuple[str, ...] = MOVEMENT_LABELS

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ClassificationReport":
        idx = list(range(len(MOVEMENT_LABELS)))
        p, r, f, s = precision_recall_fscore_support(y_true, y_pred, labels=idx,
                                                     zero_division=0)
        acc = float(np.mean(np.asarray(y_true) == np.asarray(y_pred))) if len(y_true) else 0.0
        return cls([float(v) for v in p], [float(v) for v in r], [float(v) for v in f],
                   [int(v) for v in s], acc)

    @property
    def dominant_class(self) -> str:
        return self.labels[int(np.argmax(self.support))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        return d

    def to_table(self) -> str:
        lines = [f"{'':>10} {'precision':>9} {'recall':>6} {'f1-score':>8} {'support':>7}"]
        for i, lab in enumerate(self.labels):
            lines.append(f"{lab:>10} {self.precision[i]:9.2f} {self.recall[i]:6.2f} "
                         f"{self.f1[i]:8.2f} {self.support[i]:7d}")
        lines.append(f"{'accuracy':>10} {'':9} {'':6} {self.accuracy:8.2f} {sum(self.support):7d}")
        return "\n".join(lines)


def train_classifier(windows: np.ndarray, labels: np.ndarray,
                     cfg: ClassifierConfig = ClassifierConfig(),
                     train: TrainConfig = TrainConfig(),
                     val: tuple[np.ndarray, np.ndarray] | None = None,
                     ) -> tuple[MovementClassifier, ClassificationReport, FitResult]:
    """Cross-entropy fit on normalized windows; the report is computed on ``val`` when given."""
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    clf = MovementClassifier(cfg)
    Xv, yv = val if val is not None else (None, None)
    result = fit(clf.net, windows, labels, "softmax_cross_entropy", train, Xv, yv)
    Xr, yr = (Xv, yv) if val is not None else (windows, labels)
    return clf, ClassificationReport.from_predictions(yr, clf.predict(Xr)), result


# ----------------------------------------------------------------------------- oracles

@dataclass(eq=False)
class BenchmarkTrace:
    """Per-step quantities, post-action positions, and net rewards of a strategy."""

    quantities: np.ndarray
    positions: np.ndarray
    rewards: np.ndarray
    fees: np.ndarray

    @property
    def pnl(self) -> float:
        return float(self.rewards.sum())

    def __len__(self) -> int:
        return len(self.quantities)


def _mean_mids(series) -> np.ndarray:
    if hasattr(series, "mean_mids"):
        return np.asarray(series.mean_mids(), dtype=np.float64)
    return np.asarray(series, dtype=np.float64)


def step_rewards(po, q, delta, po_max: int, fee_rate: float):
    """Net one-step reward of trading ``q`` from ``po`` before a mid change ``delta``."""
    po_new = clamp_positions(po, q, po_max)
    fee = fee_rate * np.abs(po_new - po) * abs(delta)
    return po_new * delta - fee, po_new, fee


def greedy_optimal(series, quantities: Sequence[int] = ALL_QUANTITIES, po_max: int = PO_MAX,
                   fee_rate: float = FEE_RATE, po0: int = 0) -> BenchmarkTrace:
    """Keep only the best one-step child at every step (needs the future mid series).

    ``series`` is a state chain or an array of per-state average mids.  Ties
    go to the smaller ``|quantity|``; among equal sizes the sell is listed first.
    """
    mm = _mean_mids(series)
    qs = np.array(sorted(set(int(q) for q in quantities), key=lambda q: (abs(q), q)))
    if qs.size == 0:
        raise ValueError("empty action set")
    po = po0
    out_q, out_p, out_r, out_f = [], [], [], []
    for delta in np.diff(mm):
        r, po_new, fee = step_rewards(po, qs, delta, po_max, fee_rate)
        k = int(np.argmax(r))  # first maximum, i.e. the preferred tie
        out_q.append(int(qs[k]))
        out_p.append(int(po_new[k]))
        out_r.append(float(r[k]))
        out_f.append(float(fee[k]))
        po = int(po_new[k])
    return BenchmarkTrace(np.array(out_q, dtype=np.int64), np.array(out_p, dtype=np.int64),
                          np.array(out_r), np.array(out_f))


def bfs_optimal(series, quantities: Sequence[int], po_max: int = PO_MAX,
                fee_rate: float = FEE_RATE, po0: int = 0, max_horizon: int = 6) -> float:
    """Exact best cumulative PnL by expanding every action sequence level by level."""
    mm = _mean_mids(series)
    h = len(mm) - 1
    if h > max_horizon:
        raise ValueError(f"horizon {h} exceeds the exhaustive limit {max_horizon}")
    qs = np.asarray(list(quantities), dtype=np.int64)
    if qs.size == 0:
        raise ValueError("empty action set")
    frontier_po = np.array([po0], dtype=np.int64)
    frontier_pnl = np.zeros(1)
    for delta in np.diff(mm):
        po = np.repeat(frontier_po, qs.size)
        q = np.tile(qs, frontier_po.size)
        r, po_new, _ = step_rewards(po, q, delta, po_max, fee_rate)
        frontier_pnl = np.repeat(frontier_pnl, qs.size) + r
        frontier_po = po_new
    return float(frontier_pnl.max())


@dataclass
class StrategyEnvelope:
    """Pointwise min and max cumulative PnL over fixed-quantity variants."""

    quantities: list[int]
    curves: np.ndarray       # (n_variants, n_steps)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self):
        self.curves = np.atleast_2d(np.asarray(self.curves, dtype=np.float64))
        self.lower = self.curves.min(axis=0)
        self.upper = self.curves.max(axis=0)

    def contains(self, curve, tol: float = 0.0) -> bool:
        c = np.asarray(curve, dtype=np.float64)
        return bool(np.all(c >= self.lower - tol) and np.all(c <= self.upper + tol))

    def to_rows(self) -> list[list]:
        return [[t, repr(float(lo)), repr(float(hi))]
                for t, (lo, hi) in enumerate(zip(self.lower, self.upper))]
