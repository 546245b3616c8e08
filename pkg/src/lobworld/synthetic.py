"""Synthetic LOB days with ascending, descending, or oscillating mid-price regimes.

The mid follows a drifted random walk (trending regimes) or a sine plus
Ornstein-Uhlenbeck noise (oscillating regime).  Three levels sit at fixed
tick offsets around the mid; depths are clipped log-normal with a smooth
log-depth path; trades arrive as a Bernoulli point process at the touch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .data import (N_LEVELS, QTY_MAX, QTY_MIN, TICKS_PER_STATE, Dataset, DayData, LobStream,
                   TradeStream)

REGIMES = ("ascending", "descending", "oscillating")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorParams:
    mid0: float = 100.0
    tick_size: float = 0.01
    spread_ticks: int = 2
    n_levels: int = N_LEVELS
    drift: float = 0.002          # |mid change| per tick in trending regimes
    noise: float = 0.004          # per-tick noise scale
    osc_amplitude: float = 0.6
    osc_period: int = 800
    osc_reversion: float = 0.05   # OU pull-back per tick
    depth_log_mean: float = 6.0
    depth_log_sigma: float = 0.5
    depth_min: int = 1
    depth_max: int = 5000
    depth_smoothness: float = 40.0  # correlation length (ticks) of log-depth
    trade_rate: float = 0.05      # trades per tick
    outlier_rate: float = 0.05    # share of trades outside the 100..1000 band
    impact: float = 0.0           # permanent mid shift per 1000 signed units traded
    min_ticks: int = 2 * TICKS_PER_STATE

    def validate(self) -> "GeneratorParams":
        problems = []
        if self.mid0 <= 0:
            problems.append("mid0 must be positive")
        if self.tick_size <= 0 or self.spread_ticks < 1 or self.n_levels < 1:
            problems.append("tick_size, spread_ticks and n_levels must be positive")
        if self.noise < 0 or self.osc_amplitude < 0 or self.drift < 0:
            problems.append("drift, noise and osc_amplitude must be non-negative")
        if self.osc_period <= 0:
            problems.append("osc_period must be positive")
        if not 0 <= self.osc_reversion <= 1:
            problems.append("osc_reversion must be in [0, 1]")
        if self.depth_smoothness <= 0:
            problems.append("depth_smoothness must be positive")
        for name in ("trade_rate", "outlier_rate"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must be a probability")
        if not 0 <= self.depth_min <= self.depth_max or self.depth_log_sigma < 0:
            problems.append("invalid depth distribution")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _mid_path(rng: np.random.Generator, segments: Sequence[tuple[str, int]],
              p: GeneratorParams) -> tuple[np.ndarray, list[str]]:
    mids = []
    labels: list[str] = []
    level = p.mid0
    for regime, n in segments:
        if regime not in REGIMES:
            raise ConfigError(f"unknown regime {regime!r}")
        eps = rng.standard_normal(n)
        if regime == "oscillating":
            t = np.arange(1, n + 1)
            ou = np.empty(n)
            x = 0.0
            for i in range(n):
                x = (1.0 - p.osc_reversion) * x + p.noise * eps[i]
                ou[i] = x
            seg = level + p.osc_amplitude * np.sin(2.0 * np.pi * t / p.osc_period) + ou
        else:
            sign = 1.0 if regime == "ascending" else -1.0
            seg = level + np.cumsum(sign * p.drift + p.noise * eps)
        mids.append(seg)
        labels.extend([regime] * n)
        level = float(seg[-1])
    return np.concatenate(mids), labels


def generate_mixed_day(seed: int, segments: Sequence[tuple[str, int]],
                       params: GeneratorParams | None = None, name: str = "day",
                       split: str = "train") -> DayData:
    """Concatenate regime segments into one continuous day (ground-truth labels kept)."""
    p = (params or GeneratorParams()).validate()
    n_ticks = int(sum(n for _, n in segments))
    if n_ticks < p.min_ticks or any(n <= 0 for _, n in segments):
        raise ConfigError(f"need at least {p.min_ticks} ticks and non-empty segments")
    rng = np.random.default_rng(seed)
    mid, labels = _mid_path(rng, segments, p)

    has_trade = rng.random(n_ticks) < p.trade_rate
    has_trade[0] = False
    trade_ticks = np.flatnonzero(has_trade)
    n_tr = len(trade_ticks)
    sides = np.where(rng.random(n_tr) < 0.5, 1, -1)
    qty = rng.integers(QTY_MIN, QTY_MAX + 1, size=n_tr)
    outlier = rng.random(n_tr) < p.outlier_rate
    low = rng.random(n_tr) < 0.5
    qty = np.where(outlier & low, rng.integers(1, QTY_MIN, size=n_tr), qty)
    qty = np.where(outlier & ~low, rng.integers(QTY_MAX + 1, 3 * QTY_MAX, size=n_tr), qty)
    if p.impact:
        shift = np.zeros(n_ticks)
        np.add.at(shift, trade_ticks, p.impact * sides * qty / QTY_MAX)
        mid = mid + np.cumsum(shift)

    L = p.n_levels
    half = p.spread_ticks * p.tick_size / 2.0
    offsets = np.arange(L) * p.tick_size
    ask_p = mid[:, None] + half + offsets[None, :]
    bid_p = mid[:, None] - half - offsets[None, :]
    if bid_p.min() <= 0:
        raise ConfigError("parameters drive prices non-positive; raise mid0 or lower drift")

    def depths() -> np.ndarray:
        # stationary smooth Gaussian process -> clipped log-normal marginals
        ell = p.depth_smoothness
        half_k = int(np.ceil(3 * ell))
        kern = np.exp(-0.5 * (np.arange(-half_k, half_k + 1) / ell) ** 2)
        kern /= np.sqrt((kern ** 2).sum())
        white = rng.standard_normal((n_ticks + 2 * half_k, L))
        smooth = np.stack([np.convolve(white[:, j], kern, mode="valid") for j in range(L)],
                          axis=1)
        return np.clip(np.round(np.exp(p.depth_log_mean + p.depth_log_sigma * smooth)),
                       p.depth_min, p.depth_max)

    ask_s = depths()
    bid_s = depths()
    trade_px = np.where(sides > 0, ask_p[trade_ticks, 0], bid_p[trade_ticks, 0])
    lob = LobStream(np.arange(n_ticks), ask_p, ask_s, bid_p, bid_s)
    trades = TradeStream(trade_ticks, trade_px, qty, sides)
    return DayData(name, lob, trades, split, tuple(labels))


def generate_synthetic_day(seed: int, n_ticks: int, regime: str,
                           params: GeneratorParams | None = None, name: str = "day",
                           split: str = "train") -> DayData:
    """One single-regime day; identical output for identical arguments."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    return generate_mixed_day(seed, [(regime, int(n_ticks))], params, name, split)


def generate_dataset(seed: int, regimes: Sequence[str], n_ticks: int,
                     params: GeneratorParams | None = None,
                     splits: Sequence[str] | None = None, prefix: str = "day") -> Dataset:
    """One day per entry of ``regimes``; per-day seeds are spawned from ``seed``."""
    splits = list(splits) if splits is not None else ["train"] * len(regimes)
    if len(splits) != len(regimes):
        raise ConfigError("one split tag per day required")
    children = np.random.SeedSequence(seed).spawn(len(regimes))
    days = [generate_synthetic_day(int(c.generate_state(1)[0]), n_ticks, r, params,
                                   f"{prefix}{i:03d}", s)
            for i, (c, r, s) in enumerate(zip(children, regimes, splits))]
    return Dataset(tuple(days))


def zero_noise(params: GeneratorParams | None = None) -> GeneratorParams:
    return replace(params or GeneratorParams(), noise=0.0)
