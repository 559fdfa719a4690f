"""OHLC ingestion, alignment, aggregation and the normalized price tensor.

Prices live in column-per-asset matrices. Column 0 is always the synthetic
cash asset whose open/high/low/close are identically 1; it is never read
from disk.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SCHEMA = {"timestamp": "timestamp", "asset": "asset", "open": "open",
                  "high": "high", "low": "low", "close": "close"}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class OhlcBar:
    asset_id: int
    timestamp: np.datetime64
    open: float
    high: float
    low: float
    close: float


@dataclass
class AssetSeries:
    """Time-ordered bars of one asset, stored column-wise."""

    name: str
    timestamps: np.ndarray  # datetime64[s]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    asset_id: int = -1
    is_index: bool = False

    def __post_init__(self):
        for k in ("open", "high", "low", "close"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.float64))
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > np.timedelta64(0, "s")):
            raise DataError(f"{self.name}: timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.close)

    @property
    def bars(self) -> list[OhlcBar]:
        return [OhlcBar(self.asset_id, t, o, h, lo, c) for t, o, h, lo, c in
                zip(self.timestamps, self.open, self.high, self.low, self.close)]


@dataclass
class IngestResult:
    series: dict[str, AssetSeries]
    errors: list[str] = field(default_factory=list)


def parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return np.datetime64(stamp, "s")


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


def ingest_csv(path, schema: dict[str, str] | None = None, index_asset: str | None = None) -> IngestResult:
    """Read ``timestamp,asset,open,high,low,close`` rows into one series per asset.

    Rows breaking ``low <= open, close <= high`` or duplicating a timestamp are
    skipped and reported in ``errors``; structural problems raise ``DataError``.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    rows: dict[str, list[tuple]] = {}
    errors: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [col for col in schema.values() if col not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = parse_timestamp(row[schema["timestamp"]])
            except ValueError as exc:
                raise DataError(f"line {lineno}: unparsable timestamp {row[schema['timestamp']]!r}") from exc
            try:
                o, h, lo, c = (float(row[schema[k]]) for k in ("open", "high", "low", "close"))
            except ValueError as exc:
                raise DataError(f"line {lineno}: unparsable price") from exc
            if min(o, h, lo, c) <= 0:
                raise DataError(f"line {lineno}: non-positive price")
            if not (lo <= o <= h and lo <= c <= h):
                errors.append(f"line {lineno}: OHLC invariant violated (o={o}, h={h}, l={lo}, c={c})")
                continue
            rows.setdefault(row[schema["asset"]].strip(), []).append((ts, o, h, lo, c, lineno))

    series = {}
    for asset_id, name in enumerate(sorted(rows), start=1):
        recs = sorted(rows[name], key=lambda r: (r[0], r[5]))
        kept = []
        for rec in recs:
            if kept and kept[-1][0] == rec[0]:
                errors.append(f"line {rec[5]}: duplicate timestamp for {name}")
                continue
            kept.append(rec)
        arr = list(zip(*kept))
        series[name] = AssetSeries(name, np.array(arr[0]), arr[1], arr[2], arr[3], arr[4],
                                   asset_id=asset_id, is_index=(name == index_asset))
    return IngestResult(series, errors)


def aggregate(s: AssetSeries, factor: int) -> AssetSeries:
    """Merge each run of ``factor`` bars into one; a short trailing group is dropped."""
    if len(s) == 0:
        raise DataError("cannot aggregate an empty series")
    if factor < 1 or len(s) < factor:
        raise DataError(f"factor {factor} invalid for series of length {len(s)}")
    n = len(s) // factor
    cut = n * factor

    def groups(a):
        return a[:cut].reshape(n, factor)

    return AssetSeries(s.name, s.timestamps[:cut:factor], groups(s.open)[:, 0], groups(s.high).max(axis=1),
                       groups(s.low).min(axis=1), groups(s.close)[:, -1], s.asset_id, s.is_index)


def price_relative(p_t, p_prev) -> np.ndarray:
    p_t, p_prev = np.asarray(p_t, float), np.asarray(p_prev, float)
    if p_t.shape != p_prev.shape:
        raise DataError("price vectors differ in length")
    if np.any(p_prev <= 0) or np.any(p_t <= 0):
        raise DataError("prices must be strictly positive")
    u = p_t / p_prev
    u[..., 0] = 1.0
    return u


def pct_change(prices) -> np.ndarray:
    """(p_t - p_{t-1}) / p_{t-1} along axis 0."""
    p = np.asarray(prices, float)
    if len(p) < 2:
        raise DataError("need at least two observations")
    return p[1:] / p[:-1] - 1.0


@dataclass
class MarketData:
    """Aligned prices: arrays of shape (time, m+1), column 0 is cash."""

    timestamps: np.ndarray
    assets: list[str]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    index_close: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def m(self) -> int:
        return self.close.shape[1] - 1

    def slice(self, start: int, stop: int) -> "MarketData":
        ix = None if self.index_close is None else self.index_close[start:stop]
        return MarketData(self.timestamps[start:stop], self.assets, self.open[start:stop],
                          self.high[start:stop], self.low[start:stop], self.close[start:stop], ix)

    def between(self, start: str | None, end: str | None) -> "MarketData":
        """Rows with ``start <= timestamp <= end`` (ISO dates, inclusive)."""
        mask = np.ones(len(self), dtype=bool)
        if start:
            mask &= self.timestamps >= parse_timestamp(start)
        if end:
            end_ts = parse_timestamp(end)
            if len(end.strip()) <= 10:
                end_ts = end_ts + np.timedelta64(86399, "s")
            mask &= self.timestamps <= end_ts
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            raise DataError(f"no bars between {start} and {end}")
        return self.slice(idx[0], idx[-1] + 1)

    def relatives(self) -> np.ndarray:
        """Close price relatives u_t for t = 1..T-1, shape (T-1, m+1)."""
        return price_relative(self.close[1:], self.close[:-1])

    def hlc_changes(self) -> np.ndarray:
        """Close/high/low percentage changes of the risky assets, shape (T-1, 3m)."""
        return np.concatenate([pct_change(self.close[:, 1:]), pct_change(self.high[:, 1:]),
                               pct_change(self.low[:, 1:])], axis=1)

    def index_ratio(self) -> np.ndarray:
        """Market index close ratio close_t / close_{t-1}; first entry is 1. Ones when no index."""
        if self.index_close is None:
            return np.ones(len(self))
        out = np.ones(len(self))
        out[1:] = self.index_close[1:] / self.index_close[:-1]
        return out


def align(series: dict[str, AssetSeries], index_asset: str | None = None) -> MarketData:
    """Put all series on the union of their timestamps and prepend the cash column.

    An asset without a bar at some timestamp repeats its previous close as a flat
    bar. Timestamps before every asset has started trading are dropped.
    """
    tradable = sorted(k for k, s in series.items() if k != index_asset and not s.is_index)
    if not tradable:
        raise DataError("need at least one tradable asset")
    names = tradable + ([index_asset] if index_asset else [])
    stamps = np.unique(np.concatenate([series[k].timestamps for k in names]))
    first = max(series[k].timestamps[0] for k in names)
    stamps = stamps[stamps >= first]
    cols = {}
    for k in names:
        s = series[k]
        pos = np.searchsorted(s.timestamps, stamps, side="right") - 1
        exact = s.timestamps[pos] == stamps
        prev_close = s.close[pos]
        cols[k] = tuple(np.where(exact, getattr(s, f)[pos], prev_close) for f in ("open", "high", "low", "close"))
    T = len(stamps)

    def matrix(i):
        return np.column_stack([np.ones(T)] + [cols[k][i] for k in tradable])

    index_close = cols[index_asset][3] if index_asset else None
    return MarketData(stamps, tradable, matrix(0), matrix(1), matrix(2), matrix(3), index_close)


def write_aligned_csv(data: MarketData, path, index_asset: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "asset", "open", "high", "low", "close"])
        for t, ts in enumerate(data.timestamps):
            stamp = format_timestamp(ts)
            for j, name in enumerate(data.assets, start=1):
                w.writerow([stamp, name, repr(float(data.open[t, j])), repr(float(data.high[t, j])),
                            repr(float(data.low[t, j])), repr(float(data.close[t, j]))])
            if data.index_close is not None:
                c = repr(float(data.index_close[t]))
                w.writerow([stamp, index_asset or "INDEX", c, c, c, c])


def load_market(path, index_asset: str | None = None) -> tuple[MarketData, list[str]]:
    res = ingest_csv(path, index_asset=index_asset)
    if index_asset and index_asset not in res.series:
        raise DataError(f"index asset {index_asset!r} not found in {Path(path).name}")
    return align(res.series, index_asset), res.errors


# --- observation tensor --------------------------------------------------

@dataclass
class PriceTensor:
    close_mat: np.ndarray
    high_mat: np.ndarray
    low_mat: np.ndarray

    @property
    def k2(self) -> int:
        return self.close_mat.shape[1]

    def stacked(self) -> np.ndarray:
        """Channels-first array of shape (3, m+1, k2)."""
        return np.stack([self.close_mat, self.high_mat, self.low_mat])


@dataclass
class EpisodeSlice:
    start_index: int
    length: int
    k2: int
    data: MarketData


def build_price_tensor(data: MarketData, t: int, k2: int) -> PriceTensor:
    """Window of the last ``k2`` bars ending at ``t``, each row divided by the close at ``t``."""
    if isinstance(data, EpisodeSlice):
        data = data.data
    if t < k2 - 1 or t >= len(data):
        raise DataError(f"window of {k2} bars ending at {t} exceeds available history")
    lo = t - k2 + 1
    p_t = data.close[t][:, None]
    close = data.close[lo:t + 1].T / p_t
    close[:, -1] = 1.0
    return PriceTensor(close, data.high[lo:t + 1].T / p_t, data.low[lo:t + 1].T / p_t)


def sample_episode(data: MarketData, length: int, k2: int, rng: np.random.Generator) -> EpisodeSlice:
    """Uniformly random window of ``k2 + length`` bars."""
    span = length + k2
    if len(data) < span:
        raise DataError(f"dataset of {len(data)} bars shorter than episode span {span}")
    start = int(rng.integers(0, len(data) - span + 1))
    return EpisodeSlice(start, length, k2, data.slice(start, start + span))
