"""Hand-built bucket features: 73 numeric aggregates plus a symbol id.

Each feature applies one aggregator to one per-row indicator computed over
the backward window. "Progressive" features apply an aggregator to the six
nested prefixes ending at 1/6, 2/6, ..., 6/6 of the window.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .lob import Bucket, QuoteRow

logger = logging.getLogger(__name__)

N_PROGRESSIVE = 6
EDGE_SECONDS = 100  # span of the "first 100" / "last 100" means


# ------------------------------------------------------------------ aggregators


def _gini(a: np.ndarray) -> float:
    mean = a.mean()
    if mean == 0:
        return 0.0
    n = len(a)
    s = np.sort(a)
    # sum_i sum_j |a_i - a_j| == 2 * sum_k (2k - n - 1) * s_k  (k = 1..n)
    pair_sum = 2.0 * np.dot(2.0 * np.arange(1, n + 1) - n - 1, s)
    return float(pair_sum / (2.0 * n * n * mean))


def _pct_difference(a: np.ndarray) -> float:
    return float(np.count_nonzero(a[1:] != a[:-1]) / len(a))


def _iqr(a: np.ndarray) -> float:
    q25, q75 = np.percentile(a, [25, 75])
    return float(q75 - q25)


AGGREGATORS: dict[str, Callable[[np.ndarray], float]] = {
    "mean": lambda a: float(a.mean()),
    "std": lambda a: float(a.std()),
    "sum": lambda a: float(a.sum()),
    "max": lambda a: float(a.max()),
    "count": lambda a: float(len(a)),
    "gini": _gini,
    "pct_difference": _pct_difference,
    "realized_volatility": lambda a: float(np.sqrt(np.mean(a * a))),
    "pct_greater_mean": lambda a: float(np.count_nonzero(a > a.mean()) / len(a)),
    "pct_less_mean": lambda a: float(np.count_nonzero(a < a.mean()) / len(a)),
    "pct_greater_zero": lambda a: float(np.count_nonzero(a > 0) / len(a)),
    "pct_less_zero": lambda a: float(np.count_nonzero(a < 0) / len(a)),
    "median_deviation": lambda a: float(np.median(np.abs(a - a.mean()))),
    "energy": lambda a: float(np.mean(a * a)),
    "iqr": _iqr,
}
POSITIONAL = ("mean_first_100", "mean_last_100")
AGGREGATOR_NAMES = tuple(AGGREGATORS) + POSITIONAL

# empty input imputes 0 for every aggregator
IMPUTED_VALUE = 0.0


def aggregate(
    series: Sequence[float],
    agg: str,
    positions: Sequence[int] | None = None,
    window: int | None = None,
    counter: Counter | None = None,
) -> float:
    """Apply aggregator ``agg`` to ``series``.

    ``positions`` (seconds since the window start) and ``window`` are only
    used by the positional means; without them element ``i`` sits at second
    ``i``. Empty inputs return 0 and bump ``counter["imputed"]``.
    """
    a = np.asarray(series, dtype=np.float64)
    if agg in POSITIONAL:
        pos = np.arange(len(a)) if positions is None else np.asarray(positions)
        if agg == "mean_first_100":
            a = a[pos < EDGE_SECONDS]
        else:
            end = (int(pos.max()) + 1 if len(pos) else 0) if window is None else window
            a = a[pos >= end - EDGE_SECONDS]
        agg = "mean"
    elif agg not in AGGREGATORS:
        raise KeyError(f"unknown aggregator {agg!r}")
    if a.size == 0:
        if counter is not None:
            counter["imputed"] += 1
        return IMPUTED_VALUE
    return AGGREGATORS[agg](a)


def progressive(
    series: Sequence[float],
    positions: Sequence[int],
    window: int,
    agg: str,
    counter: Counter | None = None,
) -> np.ndarray:
    """``agg`` over the six nested prefixes [0, k * window / 6), k = 1..6."""
    if window % N_PROGRESSIVE:
        raise DataError(f"window {window} is not divisible by {N_PROGRESSIVE}")
    a = np.asarray(series, dtype=np.float64)
    pos = np.asarray(positions)
    step = window // N_PROGRESSIVE
    return np.array(
        [aggregate(a[pos < k * step], agg, counter=counter) for k in range(1, N_PROGRESSIVE + 1)]
    )


# ------------------------------------------------------------------ indicators


def wap(bid_price, bid_size, ask_price, ask_size):
    """Size-weighted mid: each side's price is weighted by the opposite size."""
    total = np.asarray(bid_size, dtype=np.float64) + ask_size
    if np.any(total <= 0):
        raise DataError("WAP needs a positive total size")
    return (np.multiply(bid_price, ask_size) + np.multiply(ask_price, bid_size)) / total


def compute_wap(q: QuoteRow) -> float:
    return float(wap(q.bid_price, q.bid_size, q.ask_price, q.ask_size))


def _series_returns(price: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # return i sits at the position of the later observation
    return np.diff(np.log(price)), pos[1:]


def _names() -> list[str]:
    prog = [f"p{k}" for k in range(1, N_PROGRESSIVE + 1)]
    names = ["wap_" + a for a in ("mean", "std", "gini", "mean_first_100", "mean_last_100")]
    names += ["ask_price_pct_difference", "bid_price_pct_difference"]
    names += ["price_spread_" + a for a in ("mean", "std", "gini")]
    names += ["wap_bid_diff_" + a for a in ("mean", "std", "gini")]
    names += ["quote_return_rv_" + p for p in prog]
    names += ["quote_sq_return_std", "quote_sq_return_gini"]
    names += ["size_spread_" + a for a in ("mean", "std", "gini")]
    names += ["ask_size_pct_difference", "bid_size_pct_difference"]
    names += ["norm_ask_size_" + a for a in ("mean", "std", "gini")]
    names += ["total_size_sum", "total_size_max", "size_imbalance_sum", "size_imbalance_max"]
    names += ["trade_price_" + a for a in ("pct_greater_mean", "pct_less_mean", "median_deviation", "energy", "iqr")]
    names += ["trade_return_rv_" + p for p in prog]
    names += ["trade_return_pct_greater_zero", "trade_return_pct_less_zero"]
    names += ["trade_sq_return_std", "trade_sq_return_gini"]
    names += ["trade_size_sum_" + p for p in prog]
    names += ["trade_size_" + a for a in ("max", "median_deviation", "energy", "iqr")]
    names += ["seconds_count_" + p for p in prog]
    names += ["order_count_sum_" + p for p in prog]
    names += ["order_count_max", "amount_sum", "amount_max"]
    return names


FEATURE_NAMES: tuple[str, ...] = tuple(_names())
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 73


@dataclass
class NodeFeature:
    symbol: str
    numeric: np.ndarray
    target: float


def encode_bucket(b: Bucket, counter: Counter | None = None) -> NodeFeature:
    if len(b.quotes) == 0 or len(b.trades) == 0:
        raise DataError(f"bucket {b.symbol} {b.date} {b.anchor} has an empty window")
    W = b.backward
    q, t = b.quotes, b.trades
    qpos = q.second - b.window_start
    tpos = t.second - b.window_start

    def agg(series, name, positions=None):
        return aggregate(series, name, positions, W, counter)

    def prog(series, positions, name):
        return progressive(series, positions, W, name, counter)

    f: list[float] = []
    w = wap(q.bid_price, q.bid_size, q.ask_price, q.ask_size)
    f += [agg(w, "mean"), agg(w, "std"), agg(w, "gini"), agg(w, "mean_first_100", qpos), agg(w, "mean_last_100", qpos)]
    f += [agg(q.ask_price, "pct_difference"), agg(q.bid_price, "pct_difference")]
    spread = (q.ask_price - q.bid_price) / (q.ask_price + q.bid_price)
    f += [agg(spread, a) for a in ("mean", "std", "gini")]
    wb = w - q.bid_price
    f += [agg(wb, a) for a in ("mean", "std", "gini")]
    qret, qrpos = _series_returns(w, qpos)
    f += list(prog(qret, qrpos, "realized_volatility"))
    f += [agg(qret**2, "std"), agg(qret**2, "gini")]
    total = q.ask_size + q.bid_size
    sspread = (q.ask_size - q.bid_size) / total
    f += [agg(sspread, a) for a in ("mean", "std", "gini")]
    f += [agg(q.ask_size, "pct_difference"), agg(q.bid_size, "pct_difference")]
    norm_ask = q.ask_size / q.ask_size.mean()
    f += [agg(norm_ask, a) for a in ("mean", "std", "gini")]
    imbalance = np.abs(q.ask_size - q.bid_size)
    f += [agg(total, "sum"), agg(total, "max"), agg(imbalance, "sum"), agg(imbalance, "max")]

    p = t.vwap
    f += [agg(p, a) for a in ("pct_greater_mean", "pct_less_mean", "median_deviation", "energy", "iqr")]
    tret, trpos = _series_returns(p, tpos)
    f += list(prog(tret, trpos, "realized_volatility"))
    f += [agg(tret, "pct_greater_zero"), agg(tret, "pct_less_zero")]
    f += [agg(tret**2, "std"), agg(tret**2, "gini")]
    f += list(prog(t.volume, tpos, "sum"))
    f += [agg(t.volume, a) for a in ("max", "median_deviation", "energy", "iqr")]
    f += list(prog(tpos, tpos, "count"))
    f += list(prog(t.trade_count, tpos, "sum"))
    amount = p * t.volume
    f += [agg(t.trade_count, "max"), agg(amount, "sum"), agg(amount, "max")]

    vec = np.asarray(f, dtype=np.float64)
    if len(vec) != N_FEATURES or not np.all(np.isfinite(vec)):
        raise DataError(f"bad feature vector for bucket {b.symbol} {b.date} {b.anchor}")
    return NodeFeature(b.symbol, vec, b.target)


def encode_buckets(
    buckets: Sequence[Bucket],
    symbols: Sequence[str] | None = None,
    counter: Counter | None = None,
) -> pd.DataFrame:
    """Feature table: symbol_id, symbol, date, day_index, anchor, 73 features, target.

    ``symbols`` fixes the symbol-id vocabulary (sorted order); defaults to the
    symbols present in ``buckets``.
    """
    counter = Counter() if counter is None else counter
    vocab = sorted(set(symbols if symbols is not None else (b.symbol for b in buckets)))
    sid = {s: i for i, s in enumerate(vocab)}
    mat = np.empty((len(buckets), N_FEATURES))
    for i, b in enumerate(buckets):
        mat[i] = encode_bucket(b, counter).numeric
    if counter.get("imputed"):
        logger.info("imputed %d empty aggregates with 0", counter["imputed"])
    meta = pd.DataFrame(
        {
            "symbol_id": [sid.get(b.symbol, len(vocab)) for b in buckets],
            "symbol": [b.symbol for b in buckets],
            "date": [b.date for b in buckets],
            "day_index": [b.day_index for b in buckets],
            "anchor": [b.anchor for b in buckets],
        }
    )
    feats = pd.DataFrame(mat, columns=list(FEATURE_NAMES))
    table = pd.concat([meta, feats], axis=1)
    table["target"] = [b.target for b in buckets]
    return table
