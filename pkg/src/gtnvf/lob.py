"""Tick ingestion, one-second sampling, returns and bucket construction.

Raw events carry fractional timestamps (seconds after the open). Sampling
reduces them to at most one quote row and one trade row per integer second.
Seconds without activity are simply absent from the sampled tables.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SESSION_SECONDS = 23_400
# 10:00 ... 15:00 EST as seconds after a 9:30 open
DEFAULT_ANCHORS = (1800, 5400, 9000, 12600, 16200, 19800)
HORIZONS = (600, 1200, 1800)

QUOTE_COLUMNS = ["Date", "Symbol", "seconds", "bid_price", "bid_size", "ask_price", "ask_size"]
TRADE_COLUMNS = ["Date", "Symbol", "seconds", "trade_count", "volume", "vwap"]
RAW_QUOTE_COLUMNS = ["Date", "Symbol", "time", "bid_price", "bid_size", "ask_price", "ask_size"]
RAW_TRADE_COLUMNS = ["Date", "Symbol", "time", "price", "size"]


@dataclass(frozen=True)
class QuoteRow:
    date: str
    symbol: str
    second: int
    bid_price: float
    bid_size: float
    ask_price: float
    ask_size: float


@dataclass(frozen=True)
class TradeRow:
    date: str
    symbol: str
    second: int
    trade_count: int
    volume: float
    vwap: float


class QuoteSeries(NamedTuple):
    """Column arrays of sampled quote rows for one stock-day, sorted by second."""

    second: np.ndarray
    bid_price: np.ndarray
    bid_size: np.ndarray
    ask_price: np.ndarray
    ask_size: np.ndarray

    def window(self, lo: int, hi: int) -> "QuoteSeries":
        """Rows with lo <= second < hi."""
        i, j = np.searchsorted(self.second, [lo, hi])
        return QuoteSeries(*(col[i:j] for col in self))

    def __len__(self) -> int:  # type: ignore[override]
        return len(self.second)

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "QuoteSeries":
        df = df.sort_values("seconds", kind="stable")
        return cls(
            df["seconds"].to_numpy(np.int64),
            df["bid_price"].to_numpy(np.float64),
            df["bid_size"].to_numpy(np.float64),
            df["ask_price"].to_numpy(np.float64),
            df["ask_size"].to_numpy(np.float64),
        )


class TradeSeries(NamedTuple):
    """Column arrays of sampled trade rows for one stock-day, sorted by second."""

    second: np.ndarray
    trade_count: np.ndarray
    volume: np.ndarray
    vwap: np.ndarray

    def window(self, lo: int, hi: int) -> "TradeSeries":
        i, j = np.searchsorted(self.second, [lo, hi])
        return TradeSeries(*(col[i:j] for col in self))

    def __len__(self) -> int:  # type: ignore[override]
        return len(self.second)

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "TradeSeries":
        df = df.sort_values("seconds", kind="stable")
        return cls(
            df["seconds"].to_numpy(np.int64),
            df["trade_count"].to_numpy(np.int64),
            df["volume"].to_numpy(np.float64),
            df["vwap"].to_numpy(np.float64),
        )


@dataclass
class Bucket:
    """One (stock, anchor) unit: backward feature window plus forward target.

    ``quotes`` and ``trades`` hold the rows of [anchor - backward, anchor).
    """

    symbol: str
    date: str
    anchor: int
    backward: int
    forward: int
    quotes: QuoteSeries
    trades: TradeSeries
    target: float
    day_index: int = 0

    @property
    def window_start(self) -> int:
        return self.anchor - self.backward


def log_return(p_prev: float, p_cur: float) -> float:
    if not (p_prev > 0 and p_cur > 0):
        raise DataError(f"prices must be positive, got {p_prev!r}, {p_cur!r}")
    return float(np.log(p_cur / p_prev))


def log_returns(prices: np.ndarray) -> np.ndarray:
    """Log returns between consecutive observations (length n - 1)."""
    prices = np.asarray(prices, dtype=np.float64)
    if prices.size and np.any(prices <= 0):
        raise DataError("prices must be positive")
    if prices.size < 2:
        return np.empty(0)
    return np.diff(np.log(prices))


def realized_volatility(returns: Iterable[float]) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        return 0.0
    if not np.all(np.isfinite(r)):
        raise DataError("returns must be finite")
    return float(np.sqrt(np.sum(r * r)))


def sample_quotes(events: pd.DataFrame, counter: Counter | None = None) -> pd.DataFrame:
    """Snapshot the last best bid/ask state of every second that saw an update.

    ``events`` needs ``time`` (fractional seconds after the open) and the four
    quote fields; ``Date``/``Symbol`` are carried through when present.
    Crossed or non-positive updates are rejected before snapshotting and
    counted under ``"crossed_quote"``.
    """
    ev = events.sort_values("time", kind="stable")
    bid = ev["bid_price"].to_numpy(np.float64)
    ask = ev["ask_price"].to_numpy(np.float64)
    bad = (ask < bid) | (bid <= 0) | (ev["bid_size"].to_numpy() < 1) | (ev["ask_size"].to_numpy() < 1)
    if bad.any():
        n_bad = int(bad.sum())
        if counter is not None:
            counter["crossed_quote"] += n_bad
        logger.warning("rejected %d crossed or invalid quote updates", n_bad)
        ev = ev.loc[~bad]
    sec = np.floor(ev["time"].to_numpy(np.float64)).astype(np.int64)
    if len(sec) and (sec[0] < 0 or sec[-1] >= SESSION_SECONDS):
        raise DataError("quote timestamps outside the session")
    last = np.ones(len(sec), dtype=bool)
    last[:-1] = sec[1:] != sec[:-1]
    out = pd.DataFrame(
        {
            "seconds": sec[last],
            "bid_price": ev["bid_price"].to_numpy(np.float64)[last],
            "bid_size": ev["bid_size"].to_numpy()[last],
            "ask_price": ev["ask_price"].to_numpy(np.float64)[last],
            "ask_size": ev["ask_size"].to_numpy()[last],
        }
    )
    return _with_keys(out, ev, last, QUOTE_COLUMNS)


def sample_trades(events: pd.DataFrame, counter: Counter | None = None) -> pd.DataFrame:
    """Aggregate trades per second: count, summed shares and VWAP.

    Zero-size (or non-positive price) trades are rejected and counted under
    ``"zero_size_trade"``.
    """
    ev = events.sort_values("time", kind="stable")
    size = ev["size"].to_numpy(np.float64)
    price = ev["price"].to_numpy(np.float64)
    bad = (size <= 0) | (price <= 0)
    if bad.any():
        n_bad = int(bad.sum())
        if counter is not None:
            counter["zero_size_trade"] += n_bad
        logger.warning("rejected %d zero-size or invalid trades", n_bad)
        ev, size, price = ev.loc[~bad], size[~bad], price[~bad]
    sec = np.floor(ev["time"].to_numpy(np.float64)).astype(np.int64)
    if len(sec) and (sec[0] < 0 or sec[-1] >= SESSION_SECONDS):
        raise DataError("trade timestamps outside the session")
    if len(sec) == 0:
        empty = pd.DataFrame(
            {"seconds": np.empty(0, np.int64), "trade_count": np.empty(0, np.int64),
             "volume": np.empty(0), "vwap": np.empty(0)}
        )
        return _with_keys(empty, ev, np.zeros(0, dtype=bool), TRADE_COLUMNS)
    first = np.ones(len(sec), dtype=bool)
    first[1:] = sec[1:] != sec[:-1]
    starts = np.flatnonzero(first)
    volume = np.add.reduceat(size, starts)
    notional = np.add.reduceat(price * size, starts)
    out = pd.DataFrame(
        {
            "seconds": sec[starts],
            "trade_count": np.diff(np.append(starts, len(sec))),
            "volume": volume,
            "vwap": notional / volume,
        }
    )
    return _with_keys(out, ev, first, TRADE_COLUMNS)


def _with_keys(out: pd.DataFrame, ev: pd.DataFrame, mask: np.ndarray, columns: list[str]) -> pd.DataFrame:
    for key in ("Date", "Symbol"):
        if key in ev.columns:
            out[key] = ev[key].to_numpy()[mask]
    return out[[c for c in columns if c in out.columns]].reset_index(drop=True)


def validate_anchors(anchors: Sequence[int], forward: int, backward: int) -> tuple[int, ...]:
    """Check that every bucket fits in the session and no two buckets overlap."""
    if forward <= 0 or backward <= 0:
        raise ConfigError("window lengths must be positive")
    a = tuple(sorted(int(x) for x in anchors))
    if not a:
        raise ConfigError("no anchors configured")
    if a[0] - backward < 0 or a[-1] + forward > SESSION_SECONDS:
        raise ConfigError("bucket windows extend outside the trading session")
    for prev, nxt in zip(a, a[1:]):
        if nxt - backward < prev + forward:
            raise ConfigError(f"buckets at {prev} and {nxt} overlap for windows ({backward}, {forward})")
    return a


def build_buckets(
    quotes: QuoteSeries,
    trades: TradeSeries,
    anchors: Sequence[int] = DEFAULT_ANCHORS,
    forward: int = 600,
    backward: int | None = None,
    *,
    symbol: str = "",
    date: str = "",
    day_index: int = 0,
    counter: Counter | None = None,
) -> list[Bucket]:
    """Cut one stock-day into buckets anchored at ``anchors``.

    The target is the realized volatility of trade-VWAP log returns on the
    consecutive observed seconds of [anchor, anchor + forward). A bucket is
    dropped when either window lacks quote rows or trade rows, or when the
    forward window has fewer than two trade rows (no return to measure).
    """
    backward = forward if backward is None else backward
    anchors = validate_anchors(anchors, forward, backward)
    counter = Counter() if counter is None else counter
    out = []
    for t in anchors:
        q_back, t_back = quotes.window(t - backward, t), trades.window(t - backward, t)
        q_fwd, t_fwd = quotes.window(t, t + forward), trades.window(t, t + forward)
        if len(q_back) == 0 or len(t_back) == 0 or len(q_fwd) == 0 or len(t_fwd) == 0:
            counter["dropped_empty_window"] += 1
            continue
        if len(t_fwd) < 2:
            counter["dropped_no_forward_return"] += 1
            continue
        target = realized_volatility(log_returns(t_fwd.vwap))
        out.append(Bucket(symbol, date, t, backward, forward, q_back, t_back, target, day_index))
        counter["kept"] += 1
    return out


def bucketize(
    quote_table: pd.DataFrame,
    trade_table: pd.DataFrame,
    anchors: Sequence[int] = DEFAULT_ANCHORS,
    forward: int = 600,
    backward: int | None = None,
    counter: Counter | None = None,
) -> list[Bucket]:
    """Build buckets for every (Date, Symbol) in sampled quote/trade tables."""
    counter = Counter() if counter is None else counter
    dates = sorted(set(quote_table["Date"]) | set(trade_table["Date"]))
    day_of = {d: i for i, d in enumerate(dates)}
    trade_groups = {k: g for k, g in trade_table.groupby(["Date", "Symbol"], sort=False)}
    out: list[Bucket] = []
    for (date, symbol), qg in quote_table.groupby(["Date", "Symbol"], sort=True):
        tg = trade_groups.get((date, symbol))
        if tg is None:
            counter["dropped_empty_window"] += len(anchors)
            continue
        out += build_buckets(
            QuoteSeries.from_frame(qg),
            TradeSeries.from_frame(tg),
            anchors,
            forward,
            backward,
            symbol=str(symbol),
            date=str(date),
            day_index=day_of[date],
            counter=counter,
        )
    out.sort(key=lambda b: (b.day_index, b.anchor, b.symbol))
    return out


# ---------------------------------------------------------------- file formats


def read_table(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"Date": str, "Symbol": str})


def write_table(df: pd.DataFrame, path: str | Path) -> None:
    df.to_csv(path, index=False, float_format="%.10g")


def save_buckets(buckets: Sequence[Bucket], path: str | Path) -> None:
    """Persist buckets as one ``.npz`` archive of flat columns plus row offsets.

    Layout: per-bucket metadata arrays (``symbol``, ``date``, ``anchor``,
    ``backward``, ``forward``, ``target``, ``day_index``), concatenated quote
    columns ``q_*`` delimited by ``q_ptr`` and trade columns ``t_*`` delimited
    by ``t_ptr`` (bucket ``i`` owns rows ``ptr[i]:ptr[i+1]``).
    """
    q_ptr = np.cumsum([0] + [len(b.quotes) for b in buckets])
    t_ptr = np.cumsum([0] + [len(b.trades) for b in buckets])

    def cat(arrs, dtype):
        return np.concatenate(list(arrs)).astype(dtype) if buckets else np.empty(0, dtype)

    payload = {
        "symbol": np.array([b.symbol for b in buckets], dtype=str),
        "date": np.array([b.date for b in buckets], dtype=str),
        "anchor": np.array([b.anchor for b in buckets], dtype=np.int64),
        "backward": np.array([b.backward for b in buckets], dtype=np.int64),
        "forward": np.array([b.forward for b in buckets], dtype=np.int64),
        "target": np.array([b.target for b in buckets], dtype=np.float64),
        "day_index": np.array([b.day_index for b in buckets], dtype=np.int64),
        "q_ptr": q_ptr,
        "t_ptr": t_ptr,
    }
    for name in QuoteSeries._fields:
        payload["q_" + name] = cat((getattr(b.quotes, name) for b in buckets), np.int64 if name == "second" else np.float64)
    for name in TradeSeries._fields:
        dtype = np.int64 if name in ("second", "trade_count") else np.float64
        payload["t_" + name] = cat((getattr(b.trades, name) for b in buckets), dtype)
    np.savez(path, **payload)


def load_buckets(path: str | Path) -> list[Bucket]:
    z = np.load(path)
    q_ptr, t_ptr = z["q_ptr"], z["t_ptr"]
    qcols = [z["q_" + n] for n in QuoteSeries._fields]
    tcols = [z["t_" + n] for n in TradeSeries._fields]
    out = []
    for i in range(len(z["anchor"])):
        q = QuoteSeries(*(c[q_ptr[i] : q_ptr[i + 1]] for c in qcols))
        t = TradeSeries(*(c[t_ptr[i] : t_ptr[i + 1]] for c in tcols))
        out.append(
            Bucket(
                str(z["symbol"][i]),
                str(z["date"][i]),
                int(z["anchor"][i]),
                int(z["backward"][i]),
                int(z["forward"][i]),
                q,
                t,
                float(z["target"][i]),
                int(z["day_index"][i]),
            )
        )
    return out
