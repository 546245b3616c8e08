"""Limit-order-book data model: snapshots, windows, trade prints, transitions.

A trading day is held column-wise (:class:`LobStream`, :class:`TradeStream`)
because per-tick objects are too slow at realistic day lengths; single
:class:`LobSnapshot` objects are materialised on demand.

Feature column order everywhere is ``ap1..apL, as1..asL, bp1..bpL, bs1..bsL``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_LEVELS = 3
TICKS_PER_STATE = 40
CONTEXT_LENGTH = 10
QTY_MIN = 100
QTY_MAX = 1000
TRADE_FEATURES = 3  # normalized quantity, side sign, relative price

SPLITS = ("train", "validation", "test")


class LobValidationError(ValueError):
    """A snapshot or stream violates the order-book invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LobSnapshot:
    """One book slice; prices may be floats or :class:`decimal.Decimal`."""

    timestamp: int
    ask_prices: tuple
    ask_sizes: tuple
    bid_prices: tuple
    bid_sizes: tuple

    def __post_init__(self):
        for name in ("ask_prices", "ask_sizes", "bid_prices", "bid_sizes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ap, bp = self.ask_prices, self.bid_prices
        L = len(ap)
        if L == 0 or not (len(bp) == len(self.ask_sizes) == len(self.bid_sizes) == L):
            raise LobValidationError("snapshot needs the same non-zero number of levels per field")
        if not ap[0] > bp[0]:
            raise LobValidationError(
                f"crossed or locked book at tick {self.timestamp}: ask {ap[0]} <= bid {bp[0]}")
        if any(not (ap[i + 1] > ap[i]) for i in range(L - 1)):
            raise LobValidationError(f"ask prices not strictly increasing at tick {self.timestamp}")
        if any(not (bp[i + 1] < bp[i]) for i in range(L - 1)):
            raise LobValidationError(f"bid prices not strictly decreasing at tick {self.timestamp}")
        if any(p <= 0 for p in ap + bp):
            raise LobValidationError(f"non-positive price at tick {self.timestamp}")
        if any(s < 0 for s in self.ask_sizes + self.bid_sizes):
            raise LobValidationError(f"negative size at tick {self.timestamp}")


def mid_price(snapshot: LobSnapshot):
    """Mean of the best ask and best bid.

    Exact for :class:`decimal.Decimal` prices.
    """
    return (snapshot.ask_prices[0] + snapshot.bid_prices[0]) / 2


def first_book_violation(ap, asz, bp, bsz) -> tuple[int, str] | None:
    """Row index and description of the first invariant violation, if any."""
    checks = (
        (ap[:, 0] <= bp[:, 0], "crossed or locked book"),
        ((np.diff(ap, axis=1) <= 0).any(axis=1), "ask prices not strictly increasing"),
        ((np.diff(bp, axis=1) >= 0).any(axis=1), "bid prices not strictly decreasing"),
        (((ap <= 0) | (bp <= 0)).any(axis=1), "non-positive price"),
        (((asz < 0) | (bsz < 0)).any(axis=1), "negative size"),
    )
    found = [(int(np.flatnonzero(mask)[0]), msg) for mask, msg in checks if mask.any()]
    return min(found) if found else None


@dataclass(frozen=True)
class LobStream:
    """Column-wise LOB snapshots for one day (immutable)."""

    ticks: np.ndarray
    ask_prices: np.ndarray
    ask_sizes: np.ndarray
    bid_prices: np.ndarray
    bid_sizes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ticks", _readonly(np.asarray(self.ticks, dtype=np.int64)))
        for name in ("ask_prices", "ask_sizes", "bid_prices", "bid_sizes"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != len(self.ticks):
                raise LobValidationError(f"{name} must be (n_ticks, levels)")
            object.__setattr__(self, name, _readonly(arr))
        if np.any(np.diff(self.ticks) < 0):
            raise LobValidationError("tick index must be non-decreasing")
        bad = first_book_violation(self.ask_prices, self.ask_sizes, self.bid_prices,
                                   self.bid_sizes)
        if bad is not None:
            raise LobValidationError(f"{bad[1]} at row {bad[0]}")

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def n_levels(self) -> int:
        return self.ask_prices.shape[1]

    def mids(self) -> np.ndarray:
        return (self.ask_prices[:, 0] + self.bid_prices[:, 0]) / 2.0

    def features(self) -> np.ndarray:
        return np.concatenate([self.ask_prices, self.ask_sizes, self.bid_prices, self.bid_sizes],
                              axis=1)

    def snapshot(self, i: int) -> LobSnapshot:
        return LobSnapshot(int(self.ticks[i]), tuple(self.ask_prices[i]),
                           tuple(self.ask_sizes[i]), tuple(self.bid_prices[i]),
                           tuple(self.bid_sizes[i]))

    def __eq__(self, other):
        if not isinstance(other, LobStream):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in
                   ("ticks", "ask_prices", "ask_sizes", "bid_prices", "bid_sizes"))

    __hash__ = None


@dataclass(frozen=True)
class TradePrint:
    timestamp: int
    price: float
    quantity: int
    direction: str  # "buy" | "sell"

    def __post_init__(self):
        if self.quantity <= 0:
            raise LobValidationError(f"trade quantity must be positive, got {self.quantity}")
        if self.direction not in ("buy", "sell"):
            raise LobValidationError(f"trade direction must be buy or sell, got {self.direction!r}")

    @property
    def sign(self) -> int:
        return 1 if self.direction == "buy" else -1

    @property
    def signed_quantity(self) -> int:
        return self.sign * self.quantity


@dataclass(frozen=True)
class TradeStream:
    """Column-wise trade prints for one day; ``sides`` holds +1 (buy) / -1 (sell)."""

    ticks: np.ndarray
    prices: np.ndarray
    quantities: np.ndarray
    sides: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ticks", _readonly(np.asarray(self.ticks, dtype=np.int64)))
        object.__setattr__(self, "prices", _readonly(np.asarray(self.prices, dtype=np.float64)))
        object.__setattr__(self, "quantities",
                           _readonly(np.asarray(self.quantities, dtype=np.int64)))
        object.__setattr__(self, "sides", _readonly(np.asarray(self.sides, dtype=np.int64)))
        n = len(self.ticks)
        if not (len(self.prices) == len(self.quantities) == len(self.sides) == n):
            raise LobValidationError("trade columns must have equal length")
        if n and np.any(self.quantities <= 0):
            raise LobValidationError("trade quantity must be positive")
        if n and not np.all(np.isin(self.sides, (-1, 1))):
            raise LobValidationError("trade side must be +1 or -1")
        if np.any(np.diff(self.ticks) < 0):
            raise LobValidationError("trade ticks must be non-decreasing")

    def __len__(self) -> int:
        return len(self.ticks)

    def __getitem__(self, i: int) -> TradePrint:
        return TradePrint(int(self.ticks[i]), float(self.prices[i]), int(self.quantities[i]),
                          "buy" if self.sides[i] > 0 else "sell")

    def __iter__(self) -> Iterator[TradePrint]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_prints(cls, prints: Sequence[TradePrint]) -> "TradeStream":
        return cls([p.timestamp for p in prints], [p.price for p in prints],
                   [p.quantity for p in prints], [p.sign for p in prints])

    def __eq__(self, other):
        if not isinstance(other, TradeStream):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in
                   ("ticks", "prices", "quantities", "sides"))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DayData:
    """One trading day: book stream, trade stream, and optional per-tick regime labels."""

    name: str
    lob: LobStream
    trades: TradeStream
    split: str = "train"
    regimes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.regimes is not None:
            object.__setattr__(self, "regimes", tuple(self.regimes))
            if len(self.regimes) != len(self.lob):
                raise ValueError("regime labels must cover every tick")

    def __eq__(self, other):
        if not isinstance(other, DayData):
            return NotImplemented
        return (self.name == other.name and self.split == other.split
                and self.lob == other.lob and self.trades == other.trades)

    __hash__ = None

    def with_split(self, split: str) -> "DayData":
        return DayData(self.name, self.lob, self.trades, split, self.regimes)


@dataclass(frozen=True)
class Dataset:
    days: tuple[DayData, ...]

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))

    def split(self, tag: str) -> list[DayData]:
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        return [d for d in self.days if d.split == tag]


# ----------------------------------------------------------------------------- windows

@dataclass(frozen=True, eq=False)
class LobWindow:
    """W consecutive snapshots as a ``(W, 4L)`` feature matrix.

    ``mids`` always holds the raw per-tick mid prices, so reward computations
    never see normalized values.
    """

    ticks: np.ndarray
    features: np.ndarray
    mids: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ticks", _readonly(np.asarray(self.ticks, dtype=np.int64)))
        object.__setattr__(self, "features",
                           _readonly(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "mids", _readonly(np.asarray(self.mids, dtype=np.float64)))
        if len(self.ticks) == 0:
            raise ValueError("empty window")
        if not (len(self.features) == len(self.mids) == len(self.ticks)):
            raise ValueError("window columns must share the time axis")
        if np.any(np.diff(self.ticks) < 0):
            raise ValueError("window ticks out of order")
        if self.normalized and (self.features.min() < 0 or self.features.max() > 1):
            raise ValueError("normalized window has features outside [0, 1]")

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def first_tick(self) -> int:
        return int(self.ticks[0])

    @property
    def last_tick(self) -> int:
        return int(self.ticks[-1])

    def mean_mid(self) -> float:
        return float(self.mids.mean())


def lob_window(lob: LobStream, start: int, length: int) -> LobWindow:
    stop = start + length
    if start < 0 or stop > len(lob):
        raise IndexError(f"window [{start}, {stop}) outside stream of length {len(lob)}")
    feats = np.concatenate([lob.ask_prices[start:stop], lob.ask_sizes[start:stop],
                            lob.bid_prices[start:stop], lob.bid_sizes[start:stop]], axis=1)
    mids = (lob.ask_prices[start:stop, 0] + lob.bid_prices[start:stop, 0]) / 2.0
    return LobWindow(lob.ticks[start:stop], feats, mids)


def minmax_columns(x: np.ndarray) -> np.ndarray:
    """Scale each column of ``x`` (time on axis -2) to [0, 1]; constant columns become 0.5."""
    lo = x.min(axis=-2, keepdims=True)
    hi = x.max(axis=-2, keepdims=True)
    span = hi - lo
    flat = span <= 0
    out = (x - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.5, np.clip(out, 0.0, 1.0))


def normalize_window(window: LobWindow) -> LobWindow:
    if window.normalized:
        raise ValueError("window is already normalized")
    return LobWindow(window.ticks, minmax_columns(window.features), window.mids, normalized=True)


def state_windows(lob: LobStream, W: int = TICKS_PER_STATE,
                  max_states: int | None = None) -> list[LobWindow]:
    """Consecutive non-overlapping W-tick windows from the start of the day."""
    n = len(lob) // W
    if max_states is not None:
        n = min(n, max_states)
    feats = lob.features()
    mids = lob.mids()
    return [LobWindow(lob.ticks[i * W:(i + 1) * W], feats[i * W:(i + 1) * W],
                      mids[i * W:(i + 1) * W]) for i in range(n)]


def sliding_feature_windows(lob: LobStream, W: int = TICKS_PER_STATE,
                            stride: int = 10) -> np.ndarray:
    """Normalized ``(n, W, 4L)`` windows starting every ``stride`` ticks."""
    feats = lob.features()
    starts = np.arange(0, len(lob) - W + 1, stride)
    if starts.size == 0:
        return np.zeros((0, W, feats.shape[1]))
    idx = starts[:, None] + np.arange(W)[None, :]
    return minmax_columns(feats[idx])


# ----------------------------------------------------------------------------- trades

def normalize_quantity(q: float) -> tuple[float, bool]:
    """Map a trade quantity onto [0, 1] over the 100..1000 band.

    Returns ``(value, excluded)``; outliers are flagged and get ``nan``.
    """
    if q < QTY_MIN or q > QTY_MAX:
        return float("nan"), True
    return (q - QTY_MIN) / (QTY_MAX - QTY_MIN), False


def valid_trade_mask(trades: TradeStream) -> np.ndarray:
    q = trades.quantities
    return (q >= QTY_MIN) & (q <= QTY_MAX)


@dataclass(frozen=True, eq=False)
class TradeContext:
    """Up to U trade prints, post-zero-padded to U feature rows."""

    prints: tuple[TradePrint, ...]
    features: np.ndarray
    mask: np.ndarray

    @property
    def length(self) -> int:
        return len(self.mask)

    def __eq__(self, other):
        if not isinstance(other, TradeContext):
            return NotImplemented
        return (self.prints == other.prints and np.array_equal(self.features, other.features)
                and np.array_equal(self.mask, other.mask))

    __hash__ = None


def trade_features(prints: Sequence[TradePrint], mid_lo: float, mid_hi: float) -> np.ndarray:
    rows = []
    span = mid_hi - mid_lo
    for p in prints:
        qn, excluded = normalize_quantity(p.quantity)
        if excluded:
            raise ValueError(f"outlier trade of quantity {p.quantity} in context")
        rel = 0.5 if span <= 0 else min(max((p.price - mid_lo) / span, 0.0), 1.0)
        rows.append((qn, float(p.sign), rel))
    return np.asarray(rows, dtype=np.float64).reshape(-1, TRADE_FEATURES)


def make_context(prints: Sequence[TradePrint], window: LobWindow,
                 U: int = CONTEXT_LENGTH) -> TradeContext:
    """Keep the ``U`` most recent non-outlier prints and zero-pad to ``U`` rows."""
    kept = [p for p in prints if not normalize_quantity(p.quantity)[1]][-U:] if U else []
    feats = np.zeros((U, TRADE_FEATURES))
    mask = np.zeros(U, dtype=bool)
    if kept:
        feats[:len(kept)] = trade_features(kept, float(window.mids.min()),
                                           float(window.mids.max()))
        mask[:len(kept)] = True
    feats.setflags(write=False)
    mask.setflags(write=False)
    return TradeContext(tuple(kept), feats, mask)


def empty_context(U: int = CONTEXT_LENGTH) -> TradeContext:
    feats = np.zeros((U, TRADE_FEATURES))
    mask = np.zeros(U, dtype=bool)
    feats.setflags(write=False)
    mask.setflags(write=False)
    return TradeContext((), feats, mask)


def prints_between(trades: TradeStream, tick_lo: int, tick_hi: int,
                   index_lo: int = 0, index_hi: int | None = None) -> list[TradePrint]:
    """Trades with ``tick_lo <= tick < tick_hi`` and index in ``[index_lo, index_hi)``."""
    lo = max(int(np.searchsorted(trades.ticks, tick_lo, side="left")), index_lo)
    hi = int(np.searchsorted(trades.ticks, tick_hi, side="left"))
    if index_hi is not None:
        hi = min(hi, index_hi)
    return [trades[i] for i in range(lo, hi)]


# ----------------------------------------------------------------------------- transitions

@dataclass(frozen=True, eq=False)
class MarketState:
    window: LobWindow
    context: TradeContext
    position: int = 0


@dataclass(frozen=True, eq=False)
class Transition:
    """A historical trade treated as the target action between two W-tick windows.

    ``reward`` follows the post-action convention: the position after the
    action (the trade's signed quantity from flat, clamped to ``po_max``)
    earns the change in average mid.
    """

    state: MarketState
    action: TradePrint
    next_state: MarketState
    reward: float
    trade_index: int

    @property
    def delta_mid(self) -> float:
        return self.next_state.window.mean_mid() - self.state.window.mean_mid()


def assemble_transitions(day: DayData, W: int = TICKS_PER_STATE, U: int = CONTEXT_LENGTH,
                         po_max: int = QTY_MAX) -> list[Transition]:
    """Build one transition per usable trade print of a single day.

    The state window is the W rows before the trade's tick and the next-state
    window the W rows from that tick on.  Trades lacking a full window on
    either side, outlier trades, and windows with tick gaps are skipped (the
    skip count is logged).
    """
    lob, trades = day.lob, day.trades
    n = len(lob)
    out: list[Transition] = []
    if n < 2 * W:
        if len(trades):
            logger.warning("day %s: %d ticks < 2W=%d, skipped %d trades",
                           day.name, n, 2 * W, len(trades))
        return out
    valid = valid_trade_mask(trades)
    positions = np.searchsorted(lob.ticks, trades.ticks, side="left")
    skipped = 0
    for j in range(len(trades)):
        p = int(positions[j])
        if not valid[j] or p < W or p + W > n:
            skipped += 1
            continue
        if lob.ticks[p + W - 1] - lob.ticks[p - W] != 2 * W - 1:
            skipped += 1
            continue
        win = lob_window(lob, p - W, W)
        nxt = lob_window(lob, p, W)
        action = trades[j]
        ctx = make_context(prints_between(trades, win.first_tick, action.timestamp + 1, 0, j),
                           win, U)
        next_ctx = make_context(prints_between(trades, nxt.first_tick, nxt.last_tick + 1, j),
                                nxt, U)
        po_next = int(np.clip(action.signed_quantity, -po_max, po_max))
        reward = (nxt.mean_mid() - win.mean_mid()) * po_next
        out.append(Transition(MarketState(win, ctx, 0), action,
                              MarketState(nxt, next_ctx, po_next), reward, j))
    if skipped:
        logger.warning("day %s: skipped %d of %d trades", day.name, skipped, len(trades))
    return out


# ----------------------------------------------------------------------------- state chains

@dataclass(frozen=True, eq=False)
class StateChain:
    """Consecutive non-overlapping windows of one day, the clock shared by replay and dreams.

    ``flows[k]`` is the net signed quantity of valid prints inside window ``k``
    clipped to ``+-po_max``; it is the market action that moves the chain
    from window ``k - 1`` to window ``k``.
    """

    windows: tuple[LobWindow, ...]
    contexts: tuple[TradeContext, ...]
    flows: np.ndarray

    def __len__(self) -> int:
        return len(self.windows)

    def mean_mids(self) -> np.ndarray:
        return np.array([w.mean_mid() for w in self.windows])


def state_chain(day: DayData, W: int = TICKS_PER_STATE, U: int = CONTEXT_LENGTH,
                max_states: int | None = None, offset: int = 0,
                po_max: int = QTY_MAX) -> StateChain:
    """Windows ``[offset + kW, offset + (k+1)W)`` with the valid prints inside each as context."""
    lob, trades = day.lob, day.trades
    n = max((len(lob) - offset) // W, 0)
    if max_states is not None:
        n = min(n, max_states)
    feats, mids = lob.features(), lob.mids()
    valid = valid_trade_mask(trades)
    windows, contexts, flows = [], [], []
    for k in range(n):
        s = offset + k * W
        win = LobWindow(lob.ticks[s:s + W], feats[s:s + W], mids[s:s + W])
        lo = int(np.searchsorted(trades.ticks, win.first_tick, side="left"))
        hi = int(np.searchsorted(trades.ticks, win.last_tick + 1, side="left"))
        idx = [i for i in range(lo, hi) if valid[i]]
        windows.append(win)
        contexts.append(make_context([trades[i] for i in idx], win, U))
        flows.append(int(np.clip(trades.sides[idx] @ trades.quantities[idx], -po_max, po_max))
                     if idx else 0)
    return StateChain(tuple(windows), tuple(contexts), np.asarray(flows, dtype=np.int64))
