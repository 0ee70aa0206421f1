"""Synthetic limit-order-book data with planted cross-sectional structure.

The log volatility of stock ``s`` over block ``b`` (``block_seconds`` long)
is::

    log sigma = log(base_vol) + mu_s + a_sec F_sector(b) + a_fast H_sector(b)
                + a_ind G_industry(b) + own_sd p_s(b) + u_s(b)
                + a_sc mean_{j partner of s} u_j(b - 1)

``F``, ``H``, ``G`` and ``p`` are unit-variance AR(1) processes, ``u`` is an
iid transient. ``F`` and ``p`` are slow (persistent over days); the fast
sector component ``H`` decays within hours, so a stock's own backward window
sees it only through its idiosyncratic noise while its sector mates reveal
it jointly. The midprice is a per-second log random walk with variance
``sigma**2 / block_seconds``. Quotes straddle the midprice on a tick grid and
trades arrive as a Poisson process whose intensity is the stock's liquidity;
trade prices carry noise inversely proportional to that intensity.

With all loadings at zero the stocks are independent.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .lob import (
    DEFAULT_ANCHORS,
    SESSION_SECONDS,
    Bucket,
    QuoteSeries,
    TradeSeries,
    build_buckets,
    sample_quotes,
    sample_trades,
    validate_anchors,
    write_table,
)
from .model import config_hash

logger = logging.getLogger(__name__)

GRANULARITIES = ("sector", "industry_group", "industry", "sub_industry")


@dataclass
class SyntheticSpec:
    n_stocks: int = 30
    n_days: int = 60
    start_date: str = "2017-01-03"
    n_sectors: int = 3
    splits: tuple[int, int, int] = (2, 2, 2)  # children per parent below the sector level
    n_supply_pairs: int = 20
    block_seconds: int = 600
    base_vol: float = 0.004
    stock_vol_sd: float = 0.2
    own_sd: float = 0.2
    own_phi: float = 0.95
    transient_sd: float = 0.15
    sector_loading: float = 0.3
    sector_phi: float = 0.98
    sector_fast_loading: float = 0.0
    sector_fast_phi: float = 0.8
    industry_loading: float = 0.1
    industry_phi: float = 0.9
    supply_loading: float = 1.0
    intensity_range: tuple[float, float] = (0.02, 1.0)
    quote_base_rate: float = 0.2
    noise_k: float = 7.5e-6
    spread_k: float = 1e-4
    tick: float = 0.01
    base_price: float = 20.0
    sector_price_step: float = 2.5
    notional: float = 20_000.0
    anchors: tuple[int, ...] = DEFAULT_ANCHORS
    window: int = 600
    full_session: bool = False  # emit events outside the anchor windows too
    seed: int = 0

    def __post_init__(self):
        self.splits = tuple(self.splits)
        self.intensity_range = tuple(self.intensity_range)
        self.anchors = tuple(self.anchors)
        if self.n_stocks < 1 or self.n_days < 1:
            raise ConfigError("synthetic spec needs at least one stock and one day")
        if self.n_sectors < 1 or len(self.splits) != 3 or min(self.splits) < 1:
            raise ConfigError("bad sector plan")
        lo, hi = self.intensity_range
        if not 0 < lo <= hi:
            raise ConfigError("trade intensities must be positive")
        if SESSION_SECONDS % self.block_seconds:
            raise ConfigError("block_seconds must divide the session length")
        for a in ("own_phi", "sector_phi", "sector_fast_phi", "industry_phi"):
            if not 0 <= getattr(self, a) < 1:
                raise ConfigError(f"{a} must lie in [0, 1)")
        validate_anchors(self.anchors, self.window, self.window)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class Universe:
    """Static cross-section: symbols, taxonomy, supply chain, liquidity."""

    symbols: tuple[str, ...]
    membership: pd.DataFrame  # Symbol + one column per granularity
    pairs: pd.DataFrame  # supplier_symbol, customer_symbol
    intensity: np.ndarray  # trades per second
    base_price: np.ndarray
    mu: np.ndarray  # per-stock log-vol offset
    partners: list[np.ndarray] = field(repr=False, default_factory=list)

    def groups(self, granularity: str = "sector") -> dict[str, str]:
        if granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {granularity!r}")
        return dict(zip(self.membership["Symbol"], self.membership[granularity]))

    def pair_list(self) -> list[tuple[str, str]]:
        return list(zip(self.pairs["supplier_symbol"], self.pairs["customer_symbol"]))


def trading_dates(start: str, n_days: int) -> list[str]:
    days = np.busday_offset(np.datetime64(start), np.arange(n_days), roll="forward")
    return [str(d) for d in days]


def _taxonomy(n: int, n_sectors: int, splits: Sequence[int]) -> pd.DataFrame:
    cols = {}
    parents = [np.arange(n)]
    for level, parts in zip(GRANULARITIES, (n_sectors, *splits)):
        children = []
        for grp in parents:
            children += [c for c in np.array_split(grp, parts) if len(c)]
        label = np.empty(n, dtype=object)
        for g, members in enumerate(children):
            label[members] = f"{level[:3].upper()}{g:03d}"
        cols[level] = label
        parents = children
    return pd.DataFrame(cols)


def make_universe(spec: SyntheticSpec) -> Universe:
    rng = np.random.default_rng([spec.seed, 1])
    n = spec.n_stocks
    symbols = tuple(f"S{i:03d}" for i in range(n))
    tax = _taxonomy(n, spec.n_sectors, spec.splits)
    membership = pd.concat([pd.DataFrame({"Symbol": symbols}), tax], axis=1)
    sector_idx = pd.factorize(membership["sector"], sort=True)[0]

    all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = min(spec.n_supply_pairs, len(all_pairs))
    chosen = sorted(rng.choice(len(all_pairs), size=k, replace=False)) if k else []
    pairs, partners = [], [[] for _ in range(n)]
    for c in chosen:
        i, j = all_pairs[c]
        if rng.random() < 0.5:
            i, j = j, i
        pairs.append((symbols[i], symbols[j]))
        partners[i].append(j)
        partners[j].append(i)
    pair_df = pd.DataFrame(pairs, columns=["supplier_symbol", "customer_symbol"])

    lo, hi = spec.intensity_range
    intensity = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    base_price = spec.base_price * spec.sector_price_step**sector_idx * np.exp(rng.normal(0.0, 0.1, n))
    mu = rng.normal(0.0, spec.stock_vol_sd, n)
    return Universe(
        symbols, membership, pair_df, intensity, base_price, mu, [np.array(p, dtype=np.int64) for p in partners]
    )


def _ar1(rng: np.random.Generator, n_series: int, n_steps: int, phi: float) -> np.ndarray:
    """Unit-variance stationary AR(1) paths, shape (n_series, n_steps)."""
    out = np.empty((n_series, n_steps))
    out[:, 0] = rng.standard_normal(n_series)
    innov = rng.standard_normal((n_series, n_steps)) * np.sqrt(1.0 - phi * phi)
    for t in range(1, n_steps):
        out[:, t] = phi * out[:, t - 1] + innov[:, t]
    return out


def log_vol_paths(spec: SyntheticSpec, universe: Universe) -> np.ndarray:
    """Latent log volatility per (stock, block), blocks running across days."""
    rng = np.random.default_rng([spec.seed, 2])
    n = spec.n_stocks
    n_blocks = spec.n_days * (SESSION_SECONDS // spec.block_seconds)
    sec = pd.factorize(universe.membership["sector"], sort=True)[0]
    ind = pd.factorize(universe.membership["industry"], sort=True)[0]
    F = _ar1(rng, sec.max() + 1, n_blocks, spec.sector_phi)
    H = _ar1(rng, sec.max() + 1, n_blocks, spec.sector_fast_phi)
    G = _ar1(rng, ind.max() + 1, n_blocks, spec.industry_phi)
    p = _ar1(rng, n, n_blocks, spec.own_phi)
    u = rng.standard_normal((n, n_blocks)) * spec.transient_sd
    spill = np.zeros((n, n_blocks))
    for s, mates in enumerate(universe.partners):
        if len(mates):
            spill[s, 1:] = u[mates, :-1].mean(axis=0)
    return (
        np.log(spec.base_vol)
        + universe.mu[:, None]
        + spec.sector_loading * F[sec]
        + spec.sector_fast_loading * H[sec]
        + spec.industry_loading * G[ind]
        + spec.own_sd * p
        + u
        + spec.supply_loading * spill
    )


def _emit_mask(spec: SyntheticSpec) -> np.ndarray:
    if spec.full_session:
        return np.ones(SESSION_SECONDS, dtype=bool)
    mask = np.zeros(SESSION_SECONDS, dtype=bool)
    for t in spec.anchors:
        mask[t - spec.window : t + spec.window] = True
    return mask


def _events(rng, counts: np.ndarray, seconds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stock index and fractional time of every event, sorted by (stock, time)."""
    stock = np.repeat(np.arange(counts.shape[0]), counts.sum(axis=1))
    sec = np.repeat(np.tile(seconds, counts.shape[0]), counts.ravel())
    time = sec + rng.random(len(sec)) * 0.999
    order = np.lexsort((time, stock))
    return stock[order], time[order]


class _DayState:
    def __init__(self, spec: SyntheticSpec, universe: Universe):
        self.log_mid = np.log(universe.base_price)
        self.log_vol = log_vol_paths(spec, universe)
        self.mask = _emit_mask(spec)
        self.seconds = np.flatnonzero(self.mask)


def raw_day(spec: SyntheticSpec, universe: Universe, state: _DayState, day: int, date: str):
    """Raw quote and trade events of one day (columns of the raw file formats)."""
    rng = np.random.default_rng([spec.seed, 3, day])
    n = spec.n_stocks
    per_day = SESSION_SECONDS // spec.block_seconds
    vol = np.exp(state.log_vol[:, day * per_day : (day + 1) * per_day])
    sd = np.repeat(vol, spec.block_seconds, axis=1) / np.sqrt(spec.block_seconds)
    steps = rng.standard_normal((n, SESSION_SECONDS)) * sd
    path = state.log_mid[:, None] + np.cumsum(steps, axis=1)
    state.log_mid = path[:, -1].copy()
    mid = np.exp(path[:, state.seconds])
    lam = universe.intensity
    shares = spec.notional / universe.base_price

    q_counts = rng.poisson((spec.quote_base_rate + lam)[:, None], (n, len(state.seconds)))
    q_stock, q_time = _events(rng, q_counts, state.seconds)
    q_mid = mid[q_stock, np.searchsorted(state.seconds, np.floor(q_time).astype(np.int64))]
    half = np.maximum(spec.tick / 2, q_mid * spec.spread_k / np.sqrt(lam[q_stock]))
    bid = np.maximum(np.floor((q_mid - half) / spec.tick), 1) * spec.tick
    ask = np.maximum(np.ceil((q_mid + half) / spec.tick) * spec.tick, bid + spec.tick)
    q_size = np.maximum(1, np.round(5 * shares[q_stock][:, None] * rng.lognormal(0.0, 0.5, (len(q_stock), 2))))
    quotes = pd.DataFrame(
        {
            "Date": date,
            "Symbol": np.asarray(universe.symbols, dtype=object)[q_stock],
            "time": q_time,
            "bid_price": np.round(bid, 6),
            "bid_size": q_size[:, 0].astype(np.int64),
            "ask_price": np.round(ask, 6),
            "ask_size": q_size[:, 1].astype(np.int64),
        }
    )

    t_counts = rng.poisson(lam[:, None], (n, len(state.seconds)))
    t_stock, t_time = _events(rng, t_counts, state.seconds)
    t_mid = mid[t_stock, np.searchsorted(state.seconds, np.floor(t_time).astype(np.int64))]
    noise = spec.noise_k / lam[t_stock]
    price = t_mid * np.exp(noise * rng.standard_normal(len(t_stock)))
    size = np.maximum(1, np.round(shares[t_stock] * rng.lognormal(0.0, 0.7, len(t_stock))))
    trades = pd.DataFrame(
        {
            "Date": date,
            "Symbol": np.asarray(universe.symbols, dtype=object)[t_stock],
            "time": t_time,
            "price": price,
            "size": size.astype(np.int64),
        }
    )
    return quotes, trades


def iter_days(spec: SyntheticSpec, universe: Universe | None = None, counter: Counter | None = None) -> Iterator:
    """Yield ``(date, raw_quotes, raw_trades, sampled_quotes, sampled_trades)`` per day."""
    universe = make_universe(spec) if universe is None else universe
    state = _DayState(spec, universe)
    for day, date in enumerate(trading_dates(spec.start_date, spec.n_days)):
        rq, rt = raw_day(spec, universe, state, day, date)
        sq = pd.concat([sample_quotes(g, counter) for _, g in rq.groupby("Symbol", sort=True)], ignore_index=True)
        st = pd.concat([sample_trades(g, counter) for _, g in rt.groupby("Symbol", sort=True)], ignore_index=True)
        yield date, rq, rt, sq, st


def generate_synthetic_lob(
    spec: SyntheticSpec, out_dir: str | Path, raw: bool = False, counter: Counter | None = None
) -> dict:
    """Write per-day sampled quote and trade files plus reference data.

    Layout under ``out_dir``: ``quotes/<date>.csv`` and ``trades/<date>.csv``
    (sampled one-second rows), ``membership.csv``, ``supply_chain.csv``,
    ``liquidity.csv`` and ``manifest.json``. With ``raw`` the unsampled event
    streams go to ``raw_quotes/`` and ``raw_trades/``.
    """
    out = Path(out_dir)
    counter = Counter() if counter is None else counter
    universe = make_universe(spec)
    dirs = ["quotes", "trades"] + (["raw_quotes", "raw_trades"] if raw else [])
    for d in dirs:
        (out / d).mkdir(parents=True, exist_ok=True)
    write_reference_files(universe, out)
    dates = []
    for date, rq, rt, sq, st in iter_days(spec, universe, counter):
        write_table(sq, out / "quotes" / f"{date}.csv")
        write_table(st, out / "trades" / f"{date}.csv")
        if raw:
            write_table(rq, out / "raw_quotes" / f"{date}.csv")
            write_table(rt, out / "raw_trades" / f"{date}.csv")
        dates.append(date)
    manifest = {"spec": spec.to_dict(), "spec_hash": spec.hash(), "dates": dates, "counters": dict(counter)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    logger.info("wrote %d synthetic days to %s", len(dates), out)
    return manifest


def write_reference_files(universe: Universe, out_dir: str | Path) -> None:
    out = Path(out_dir)
    write_table(universe.membership, out / "membership.csv")
    write_table(universe.pairs, out / "supply_chain.csv")
    write_table(pd.DataFrame({"Symbol": universe.symbols, "intensity": universe.intensity}), out / "liquidity.csv")


def synthetic_buckets(spec: SyntheticSpec, counter: Counter | None = None) -> tuple[list[Bucket], Universe, pd.DataFrame]:
    """Generate in memory and cut buckets directly (no files).

    Also returns the sampled trade table's daily turnover per symbol.
    """
    counter = Counter() if counter is None else counter
    universe = make_universe(spec)
    buckets: list[Bucket] = []
    turnover = []
    for day, (date, _, _, sq, st) in enumerate(iter_days(spec, universe, counter)):
        tgroups = dict(tuple(st.groupby("Symbol", sort=False)))
        for sym, qg in sq.groupby("Symbol", sort=True):
            tg = tgroups.get(sym)
            if tg is None:
                counter["dropped_empty_window"] += len(spec.anchors)
                continue
            buckets += build_buckets(
                QuoteSeries.from_frame(qg),
                TradeSeries.from_frame(tg),
                spec.anchors,
                spec.window,
                spec.window,
                symbol=sym,
                date=date,
                day_index=day,
                counter=counter,
            )
            turnover.append((sym, date, day, float(np.dot(tg["vwap"], tg["volume"]))))
    buckets.sort(key=lambda b: (b.day_index, b.anchor, b.symbol))
    return buckets, universe, pd.DataFrame(turnover, columns=["symbol", "date", "day_index", "turnover"])


# ------------------------------------------------------------------ HAR panels


def har_panel(
    params: Sequence[float],
    n_obs: int = 10_000,
    n_stocks: int = 50,
    noise_sd: float = 0.01,
    buckets_per_day: int = 6,
    seed: int = 0,
) -> pd.DataFrame:
    """RV panel following the intraday HAR recursion exactly, plus Gaussian noise.

    Each stock starts from its own random five-day history. The decaying
    transients from these heterogeneous starts make all four coefficients
    identifiable at small noise.
    """
    b0, bb, bd, bw = map(float, params)
    rng = np.random.default_rng(seed)
    per_stock = np.full(n_stocks, n_obs // n_stocks)
    per_stock[: n_obs % n_stocks] += 1
    warm = 5 * buckets_per_day
    frames = []
    for s, n in enumerate(per_stock):
        rv = np.empty(n)
        rv[: min(n, warm)] = rng.uniform(0.2, 2.0, min(n, warm))
        day_mean = {}
        for i in range(n):
            d, k = divmod(i, buckets_per_day)
            if i >= warm:
                week = np.mean([day_mean[x] for x in range(d - 5, d)])
                rv[i] = b0 + bb * rv[i - 1] + bd * day_mean[d - 1] + bw * week + rng.normal(0.0, noise_sd)
            if k == buckets_per_day - 1:
                day_mean[d] = rv[i - k : i + 1].mean()
        frames.append(
            pd.DataFrame(
                {
                    "symbol": f"H{s:03d}",
                    "day_index": np.arange(n) // buckets_per_day,
                    "anchor": np.arange(n) % buckets_per_day,
                    "rv": rv,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
