"""CSV + JSON-manifest storage for datasets.

Layout of a dataset directory::

    manifest.json            # format, version, levels, one entry per day
    <day>_lob.csv            # tick, ap1..apL, as1..asL, bp1..bpL, bs1..bsL
    <day>_trades.csv         # tick, price, qty, dir  (dir is B or S)

Prices are written with Python's round-tripping float repr, sizes as integers.
"""
from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

import numpy as np

from .data import (N_LEVELS, SPLITS, Dataset, DayData, LobStream, TradeStream,
                   first_book_violation)

MANIFEST = "manifest.json"
DATASET_FORMAT = "lobworld-dataset"
DATASET_VERSION = 1


class DataFormatError(ValueError):
    def __init__(self, path: Path | str, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def lob_columns(levels: int = N_LEVELS) -> list[str]:
    return (["tick"] + [f"ap{i}" for i in range(1, levels + 1)]
            + [f"as{i}" for i in range(1, levels + 1)]
            + [f"bp{i}" for i in range(1, levels + 1)]
            + [f"bs{i}" for i in range(1, levels + 1)])


TRADE_COLUMNS = ["tick", "price", "qty", "dir"]


def _fmt_size(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_lob_csv(path: Path, lob: LobStream) -> None:
    L = lob.n_levels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(lob_columns(L))
        for i in range(len(lob)):
            w.writerow([int(lob.ticks[i])]
                       + [repr(float(v)) for v in lob.ask_prices[i]]
                       + [_fmt_size(v) for v in lob.ask_sizes[i]]
                       + [repr(float(v)) for v in lob.bid_prices[i]]
                       + [_fmt_size(v) for v in lob.bid_sizes[i]])


def write_trades_csv(path: Path, trades: TradeStream) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_COLUMNS)
        for i in range(len(trades)):
            w.writerow([int(trades.ticks[i]), repr(float(trades.prices[i])),
                        int(trades.quantities[i]), "B" if trades.sides[i] > 0 else "S"])


def read_lob_csv(path: Path, levels: int = N_LEVELS) -> LobStream:
    cols = lob_columns(levels)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != cols:
            raise DataFormatError(path, 1, f"expected header {','.join(cols)}")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise DataFormatError(path, line, f"expected {len(cols)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(path, line, f"non-numeric field ({exc})") from None
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(cols))
    L = levels
    ticks = arr[:, 0]
    ap, asz = arr[:, 1:1 + L], arr[:, 1 + L:1 + 2 * L]
    bp, bsz = arr[:, 1 + 2 * L:1 + 3 * L], arr[:, 1 + 3 * L:1 + 4 * L]
    if np.any(ticks != np.round(ticks)):
        row = int(np.flatnonzero(ticks != np.round(ticks))[0])
        raise DataFormatError(path, row + 2, "tick must be an integer")
    back = np.flatnonzero(np.diff(ticks) < 0)
    if back.size:
        raise DataFormatError(path, int(back[0]) + 3, "tick index decreases")
    bad = first_book_violation(ap, asz, bp, bsz)
    if bad is not None:
        raise DataFormatError(path, bad[0] + 2, bad[1])
    return LobStream(ticks.astype(np.int64), ap, asz, bp, bsz)


def read_trades_csv(path: Path) -> TradeStream:
    ticks, prices, qty, sides = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRADE_COLUMNS:
            raise DataFormatError(path, 1, f"expected header {','.join(TRADE_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataFormatError(path, line, f"expected 4 fields, got {len(row)}")
            try:
                t, p, q = int(row[0]), float(row[1]), int(row[2])
            except ValueError as exc:
                raise DataFormatError(path, line, f"bad field ({exc})") from None
            if q <= 0:
                raise DataFormatError(path, line, "quantity must be positive")
            if p <= 0:
                raise DataFormatError(path, line, "price must be positive")
            if row[3] not in ("B", "S"):
                raise DataFormatError(path, line, f"dir must be B or S, got {row[3]!r}")
            if ticks and t < ticks[-1]:
                raise DataFormatError(path, line, "tick index decreases")
            ticks.append(t)
            prices.append(p)
            qty.append(q)
            sides.append(1 if row[3] == "B" else -1)
    return TradeStream(ticks, prices, qty, sides)


def _rle(labels) -> list[list]:
    return [[k, len(list(g))] for k, g in itertools.groupby(labels)]


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``dataset`` into directory ``path`` (created if missing)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    levels = dataset.days[0].lob.n_levels if dataset.days else N_LEVELS
    entries = []
    for day in dataset.days:
        lob_file, trade_file = f"{day.name}_lob.csv", f"{day.name}_trades.csv"
        write_lob_csv(root / lob_file, day.lob)
        write_trades_csv(root / trade_file, day.trades)
        entry = {"name": day.name, "split": day.split, "lob": lob_file, "trades": trade_file}
        if day.regimes is not None:
            entry["regimes"] = _rle(day.regimes)
        entries.append(entry)
    manifest = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "levels": levels,
                "days": entries}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_dataset(path: str | Path, format: str = "csv",
                 splits: tuple[str, ...] | None = None) -> Dataset:
    """Read a dataset directory; with ``splits`` only those days' files are opened."""
    if format != "csv":
        raise ValueError(f"unsupported dataset format {format!r}")
    root = Path(path)
    mpath = root / MANIFEST
    if not mpath.exists():
        raise DataFormatError(mpath, None, "manifest missing")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(mpath, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if manifest.get("format") != DATASET_FORMAT or manifest.get("version") != DATASET_VERSION:
        raise DataFormatError(mpath, None, "unsupported dataset format or version")
    levels = int(manifest.get("levels", N_LEVELS))
    days = []
    for entry in manifest["days"]:
        if entry.get("split") not in SPLITS:
            raise DataFormatError(mpath, None, f"day {entry.get('name')}: bad split tag")
        if splits is not None and entry["split"] not in splits:
            continue
        lob = read_lob_csv(root / entry["lob"], levels)
        trades = read_trades_csv(root / entry["trades"])
        regimes = None
        if "regimes" in entry:
            regimes = tuple(lab for lab, n in entry["regimes"] for _ in range(n))
        days.append(DayData(entry["name"], lob, trades, entry["split"], regimes))
    return Dataset(tuple(days))
