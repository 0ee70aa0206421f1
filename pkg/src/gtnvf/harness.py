"""Experiment orchestration: data preparation, splits, model grid and reports.

``run_experiment`` reproduces the layout of the results grid (baselines,
vanilla model, single-relation variants and the full model), with val and
test RMSPE per seed, plus liquidity and degree ablation tables. An ``Audit``
records the latest timestamp that every training artifact touched so that
leakage into the test period can be asserted.
"""

from __future__ import annotations

import json
import logging
import subprocess
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .baselines import MlpConfig, har_fit, har_fit_per_stock, har_lags, har_predict, mlp_baseline, naive_guess
from .errors import ConfigError, DataError, GtnvfError
from .features import FEATURE_NAMES, encode_buckets
from .graph import RELATIONS, Graph, NodeGrid, build_graph
from .lob import DEFAULT_ANCHORS, Bucket, bucketize, read_table
from .model import GtnConfig, TrainedGtn, config_hash, rmspe_loss, save_checkpoint, train
from .synthetic import GRANULARITIES, SyntheticSpec, synthetic_buckets

logger = logging.getLogger(__name__)

DAY_SECONDS = 86_400

ROW_NAMES = {
    "naive": "Naive Guess",
    "har": "HAR-RV",
    "mlp": "MLP",
    "vanilla": "Vanilla GTN-VF",
    "temporal_fc": "GTN-VF Temp FC",
    "cross_fc": "GTN-VF Cross FC",
    "sector": "GTN-VF Sector",
    "supply_chain": "GTN-VF Supply Chain",
    "cross_temporal": "GTN-VF Cross FC + Temp FC",
    "full": "GTN-VF",
}
GTN_RELATIONS = {
    "vanilla": (),
    "temporal_fc": ("temporal_fc",),
    "cross_fc": ("cross_fc",),
    "sector": ("sector",),
    "supply_chain": ("supply_chain",),
    "cross_temporal": ("cross_fc", "temporal_fc"),
}
DEFAULT_MODELS = ("naive", "har", "mlp", "vanilla", "temporal_fc", "cross_fc", "sector", "supply_chain", "full")


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    quotes_dir: str | None = None
    trades_dir: str | None = None
    membership_path: str | None = None
    supply_chain_path: str | None = None
    forward: int = 600
    backward: int | None = None
    anchors: tuple[int, ...] = DEFAULT_ANCHORS
    k_temporal: int = 2
    k_cross: int = 2
    relations: dict[str, bool] = field(default_factory=lambda: {r: True for r in RELATIONS})
    granularity: str = "sector"
    leak_free: bool = True
    gtn: GtnConfig = field(default_factory=GtnConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    har_per_stock: bool = False
    split_dates: tuple[str, str] | None = None
    split_fractions: tuple[float, float] = (0.61, 0.21)
    seeds: tuple[int, ...] = (0, 1, 2)
    models: tuple[str, ...] = DEFAULT_MODELS
    liquidity_buckets: int = 50
    degree_buckets: int = 10
    sweep_granularities: tuple[str, ...] = GRANULARITIES
    sector_edge_cap: int = 2_000_000
    save_checkpoints: bool = True

    def __post_init__(self):
        self.anchors = tuple(self.anchors)
        self.seeds = tuple(self.seeds)
        self.models = tuple(self.models)
        self.split_fractions = tuple(self.split_fractions)
        self.sweep_granularities = tuple(self.sweep_granularities)
        if self.split_dates is not None:
            self.split_dates = tuple(self.split_dates)
            if len(self.split_dates) != 2:
                raise ConfigError("split_dates needs exactly two boundaries")
        unknown = set(self.relations) - set(RELATIONS)
        if unknown:
            raise ConfigError(f"unknown relations {sorted(unknown)}")
        bad = set(self.models) - set(ROW_NAMES)
        if bad:
            raise ConfigError(f"unknown models {sorted(bad)}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.quotes_dir or self.trades_dir:
            # file inputs take precedence over the default synthetic desk
            self.synthetic = None
        if self.synthetic is None and not (self.quotes_dir and self.trades_dir):
            raise ConfigError("either a synthetic spec or quotes_dir/trades_dir is required")
        if not self.seeds:
            raise ConfigError("no seeds configured")

    @property
    def enabled_relations(self) -> tuple[str, ...]:
        return tuple(r for r in RELATIONS if self.relations.get(r, False))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gtn"] = self.gtn.to_dict()
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            if isinstance(d.get("synthetic"), Mapping):
                d["synthetic"] = SyntheticSpec(**d["synthetic"])
            if isinstance(d.get("gtn"), Mapping):
                d["gtn"] = GtnConfig(**d["gtn"])
            if isinstance(d.get("mlp"), Mapping):
                m = dict(d["mlp"])
                if "hidden" in m:
                    m["hidden"] = tuple(m["hidden"])
                d["mlp"] = MlpConfig(**m)
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def version_string() -> str:
    """Package version, with the short commit hash when run from a git checkout."""
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


# ------------------------------------------------------------------ split


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    boundaries: tuple[str, str]
    flags: list[str] = field(default_factory=list)

    def proportions(self) -> dict[str, float]:
        n = len(self.train) + len(self.val) + len(self.test)
        return {k: len(getattr(self, k)) / n for k in ("train", "val", "test")}

    def labels(self, n: int) -> np.ndarray:
        out = np.full(n, "", dtype=object)
        out[self.train], out[self.val], out[self.test] = "train", "val", "test"
        return out


def default_boundaries(dates: Sequence[str], fractions: Sequence[float] = (0.61, 0.21)) -> tuple[str, str]:
    """Validation and test start dates giving roughly the requested day fractions."""
    days = sorted(set(dates))
    n = len(days)
    if n < 3:
        raise ConfigError("need at least three dates to split")
    i1 = min(max(1, int(round(fractions[0] * n))), n - 2)
    i2 = min(max(i1 + 1, int(round((fractions[0] + fractions[1]) * n))), n - 1)
    return days[i1], days[i2]


def split_chronological(dates: Sequence[str], boundaries: Sequence[str]) -> Split:
    """Train before ``boundaries[0]``, validation until ``boundaries[1]``, test after.

    Dates compare as ISO strings. An empty training split is an error; empty
    validation or test splits are flagged.
    """
    b0, b1 = boundaries
    if b0 > b1:
        raise ConfigError(f"split boundaries out of order: {b0} > {b1}")
    d = np.asarray(dates, dtype=str)
    train = np.flatnonzero(d < b0)
    val = np.flatnonzero((d >= b0) & (d < b1))
    test = np.flatnonzero(d >= b1)
    if len(train) == 0:
        raise ConfigError("empty training split")
    flags = [f"empty {name} split" for name, idx in (("validation", val), ("test", test)) if len(idx) == 0]
    for f in flags:
        logger.warning(f)
    return Split(train, val, test, (b0, b1), flags)


# ------------------------------------------------------------------ audit


@dataclass
class Audit:
    """Latest timestamp (day_index * 86400 + second) touched per stage."""

    test_start: int
    touched: dict[str, int] = field(default_factory=dict)

    def record(self, stage: str, times) -> None:
        times = np.asarray(times)
        if times.size:
            self.touched[stage] = max(self.touched.get(stage, -1), int(times.max()))

    @property
    def max_touched(self) -> int:
        return max(self.touched.values(), default=-1)

    @property
    def ok(self) -> bool:
        return self.max_touched < self.test_start

    def to_dict(self) -> dict:
        return {"test_start": self.test_start, "max_touched": self.max_touched, "ok": self.ok, "touched": self.touched}


def in_neighborhood(graph: Graph, nodes: np.ndarray, hops: int) -> np.ndarray:
    """Nodes within ``hops`` in-edges of ``nodes`` (including them)."""
    seen = np.zeros(graph.n_nodes, dtype=bool)
    frontier = np.unique(np.asarray(nodes, dtype=np.int64))
    seen[frontier] = True
    for _ in range(hops):
        starts, ends = graph.indptr[frontier], graph.indptr[frontier + 1]
        counts = ends - starts
        if counts.sum() == 0:
            break
        pos = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts) + np.arange(counts.sum())
        nxt = np.unique(graph.indices[pos])
        frontier = nxt[~seen[nxt]]
        seen[frontier] = True
    return np.flatnonzero(seen)


# ------------------------------------------------------------------ data


@dataclass
class Dataset:
    table: pd.DataFrame
    buckets: list[Bucket] = field(repr=False)
    grid: NodeGrid = field(repr=False)
    split: Split
    membership: pd.DataFrame | None
    pairs: list[tuple[str, str]]
    turnover: pd.DataFrame  # symbol, date, day_index, turnover
    naive: np.ndarray
    counters: Counter
    forward: int

    @property
    def features(self) -> np.ndarray:
        return self.table[list(FEATURE_NAMES)].to_numpy(np.float64)

    @property
    def targets(self) -> np.ndarray:
        return self.table["target"].to_numpy(np.float64)

    @property
    def symbol_ids(self) -> np.ndarray:
        return self.table["symbol_id"].to_numpy(np.int64)

    @property
    def n_symbols(self) -> int:
        return len(self.grid.symbols)

    def node_times(self) -> np.ndarray:
        """Anchor timestamps of all nodes."""
        return self.table["day_index"].to_numpy(np.int64) * DAY_SECONDS + self.table["anchor"].to_numpy(np.int64)

    def test_start(self) -> int:
        if len(self.split.test) == 0:
            return int(self.node_times().max()) + DAY_SECONDS
        return int(self.table["day_index"].to_numpy()[self.split.test].min()) * DAY_SECONDS

    def candidate_times(self, leak_free: bool) -> np.ndarray | None:
        if not leak_free:
            return None
        train_days = set(self.table["day_index"].to_numpy()[self.split.train].tolist())
        return np.array([d in train_days for d, _ in self.grid.times])

    def membership_map(self, granularity: str) -> dict[str, str] | None:
        if self.membership is None:
            return None
        if granularity not in self.membership.columns:
            raise ConfigError(f"membership file has no {granularity!r} column")
        return dict(zip(self.membership["Symbol"].astype(str), self.membership[granularity].astype(str)))


def _read_dir(path: str | Path) -> pd.DataFrame:
    files = sorted(Path(path).glob("*.csv"))
    if not files:
        raise DataError(f"no .csv files in {path}")
    return pd.concat([read_table(f) for f in files], ignore_index=True)


def daily_turnover(trade_table: pd.DataFrame) -> pd.DataFrame:
    """Traded value sum(vwap * volume) per symbol and date."""
    t = trade_table.assign(turnover=trade_table["vwap"] * trade_table["volume"])
    out = t.groupby(["Symbol", "Date"], sort=True)["turnover"].sum().reset_index()
    return out.rename(columns={"Symbol": "symbol", "Date": "date"})


def load_file_buckets(config: ExperimentConfig, counter: Counter) -> tuple[list[Bucket], pd.DataFrame]:
    quotes, trades = _read_dir(config.quotes_dir), _read_dir(config.trades_dir)
    buckets = bucketize(quotes, trades, config.anchors, config.forward, config.backward, counter)
    turnover = daily_turnover(trades)
    dates = sorted(set(quotes["Date"]) | set(trades["Date"]))
    turnover["day_index"] = turnover["date"].map({d: i for i, d in enumerate(dates)})
    return buckets, turnover


def prepare(config: ExperimentConfig, seed: int = 0) -> Dataset:
    """Buckets, feature table, node grid and chronological split for one seed.

    Synthetic data are regenerated with ``spec.seed + seed``.
    """
    counter: Counter = Counter()
    if config.synthetic is not None:
        spec = replace(config.synthetic, seed=config.synthetic.seed + seed)
        if spec.window != config.forward or tuple(spec.anchors) != tuple(config.anchors):
            spec = replace(spec, window=config.forward, anchors=tuple(config.anchors))
        buckets, universe, turnover = synthetic_buckets(spec, counter)
        membership, pairs = universe.membership, universe.pair_list()
    else:
        buckets, turnover = load_file_buckets(config, counter)
        membership = read_table(config.membership_path) if config.membership_path else None
        pairs = []
        if config.supply_chain_path:
            sc = read_table(config.supply_chain_path)
            pairs = list(zip(sc.iloc[:, 0].astype(str), sc.iloc[:, 1].astype(str)))
    if not buckets:
        raise DataError("no buckets survived sampling")
    logger.info("built %d buckets (%s)", len(buckets), dict(counter))
    table = encode_buckets(buckets, counter=counter)
    grid = NodeGrid.from_table(table)
    boundaries = config.split_dates or default_boundaries(table["date"], config.split_fractions)
    split = split_chronological(table["date"], boundaries)
    naive = np.array([naive_guess(b) for b in buckets])
    return Dataset(table, buckets, grid, split, membership, pairs, turnover, naive, counter, config.forward)


def relation_graph(
    ds: Dataset, relations: Sequence[str], config: ExperimentConfig, granularity: str | None = None
) -> tuple[Graph, list]:
    membership = ds.membership_map(granularity or config.granularity) if "sector" in relations else None
    if "sector" in relations and membership is None:
        raise ConfigError("the sector relation needs a membership file")
    return build_graph(
        ds.table,
        ds.grid,
        relations,
        k_temporal=config.k_temporal,
        k_cross=config.k_cross,
        membership=membership,
        pairs=ds.pairs,
        candidate_times=ds.candidate_times(config.leak_free),
        counter=ds.counters,
    )


# ------------------------------------------------------------------ models


def rmspe(pred: np.ndarray, target: np.ndarray, eps: float = 1e-8) -> float:
    if len(target) == 0:
        return float("nan")
    return float(rmspe_loss(np.asarray(pred, dtype=np.float64), target, eps))


def har_panel_from(ds: Dataset) -> pd.DataFrame:
    t = ds.table
    return pd.DataFrame(
        {"symbol": t["symbol"], "day_index": t["day_index"], "anchor": t["anchor"], "rv": t["target"], "recent": ds.naive}
    )


def run_har(ds: Dataset, config: ExperimentConfig, audit: Audit | None = None) -> np.ndarray:
    panel = har_panel_from(ds)
    lagged = har_lags(panel)
    train = panel.iloc[ds.split.train]
    if audit is not None:
        audit.record("har_fit", ds.node_times()[ds.split.train] + ds.forward)
    lb, ld, lw = (lagged[c].to_numpy() for c in ("lag_bucket", "lag_day", "lag_week"))
    if config.har_per_stock:
        params = har_fit_per_stock(train)
        out = ds.naive.copy()
        for sym, p in params.items():
            rows = np.flatnonzero(panel["symbol"].to_numpy() == sym)
            out[rows] = har_predict(p, lb[rows], ld[rows], lw[rows], ds.naive[rows])
        return out
    return har_predict(har_fit(train), lb, ld, lw, ds.naive)


def _record_training(audit: Audit, ds: Dataset, stage: str, graph: Graph | None, hops: int) -> None:
    times = ds.node_times()
    tr, va = ds.split.train, ds.split.val
    audit.record(f"{stage}:scaler", times[tr])
    audit.record(f"{stage}:targets", times[tr] + ds.forward)
    audit.record(f"{stage}:validation", times[va] + ds.forward)
    if graph is not None:
        audit.record(f"{stage}:neighborhood", times[in_neighborhood(graph, np.concatenate([tr, va]), hops)])


def run_mlp(ds: Dataset, config: ExperimentConfig, seed: int, audit: Audit | None = None) -> np.ndarray:
    cfg = replace(config.mlp, seed=seed)
    x, y = ds.features, ds.targets
    tr, va = ds.split.train, ds.split.val
    trained = mlp_baseline(x[tr], y[tr], cfg, x[va], y[va])
    if audit is not None:
        _record_training(audit, ds, "mlp", None, 0)
    return trained.predict(x)


def run_gtn(
    ds: Dataset, graph: Graph, config: ExperimentConfig, seed: int, audit: Audit | None = None, stage: str = "gtn"
) -> tuple[np.ndarray, TrainedGtn]:
    cfg = replace(config.gtn, seed=seed)
    trained = train(ds.features, ds.symbol_ids, ds.targets, graph, ds.split.train, ds.split.val, cfg, ds.n_symbols)
    if audit is not None:
        _record_training(audit, ds, stage, graph, cfg.layers)
    return trained.predict(ds.features, ds.symbol_ids, graph), trained


# ------------------------------------------------------------------ reports


@dataclass
class TrendReport:
    table: pd.DataFrame
    slopes: dict[str, float]


def _slope(y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    x = np.arange(len(y))[ok]
    return float(np.polyfit(x, y[ok], 1)[0])


def liquidity_report(
    frame: pd.DataFrame, turnover: Mapping[str, float], models: Sequence[str], n_buckets: int = 50
) -> TrendReport:
    """Per-turnover-bucket RMSPE and least-squares trend slopes.

    ``frame`` holds ``symbol``, ``target`` and one prediction column per
    model. Stocks are ranked by turnover (ascending) and cut into
    ``n_buckets`` near-equal groups; the slope is RMSPE against bucket rank.
    """
    symbols = sorted(set(frame["symbol"]))
    missing = [s for s in symbols if s not in turnover]
    if missing:
        raise DataError(f"no turnover for {missing[:3]}")
    if len(symbols) < n_buckets:
        logger.warning("only %d stocks; reducing liquidity buckets from %d", len(symbols), n_buckets)
        n_buckets = len(symbols)
    ranked = sorted(symbols, key=lambda s: (turnover[s], s))
    bucket_of = {}
    for b, members in enumerate(np.array_split(np.array(ranked, dtype=object), n_buckets)):
        for s in members:
            bucket_of[s] = b
    f = frame.assign(bucket=frame["symbol"].map(bucket_of))
    rows = []
    for b in range(n_buckets):
        g = f[f["bucket"] == b]
        members = [s for s in ranked if bucket_of[s] == b]
        row = {"bucket": b, "n_stocks": len(members), "turnover": float(np.mean([turnover[s] for s in members]))}
        for m in models:
            row[m] = rmspe(g[m].to_numpy(), g["target"].to_numpy())
        rows.append(row)
    table = pd.DataFrame(rows)
    return TrendReport(table, {m: _slope(table[m].to_numpy()) for m in models})


def degree_report(frame: pd.DataFrame, degree: np.ndarray, models: Sequence[str], n_buckets: int = 10) -> TrendReport:
    """RMSPE bucketed by node in-degree; isolated nodes form their own bucket.

    ``degree`` is aligned with the rows of ``frame``.
    """
    degree = np.asarray(degree, dtype=np.int64)
    values = np.unique(degree)
    groups: list[np.ndarray] = []
    if values.size and values[0] == 0:
        groups.append(values[:1])
        values = values[1:]
    if values.size:
        groups += [g for g in np.array_split(values, min(max(n_buckets - len(groups), 1), len(values))) if len(g)]
    rows = []
    for b, vals in enumerate(groups):
        mask = np.isin(degree, vals)
        g = frame[mask]
        row = {"bucket": b, "degree_lo": int(vals.min()), "degree_hi": int(vals.max()), "n_nodes": int(mask.sum())}
        for m in models:
            row[m] = rmspe(g[m].to_numpy(), g["target"].to_numpy())
        rows.append(row)
    table = pd.DataFrame(rows)
    return TrendReport(table, {m: _slope(table[m].to_numpy()) for m in models})


def format_table(table: pd.DataFrame, header: Mapping[str, object]) -> str:
    """Tab-separated text with ``# key=value`` header lines and fixed float format."""
    lines = [f"# {k}={v}" for k, v in header.items()]
    lines.append("\t".join(map(str, table.columns)))
    for row in table.itertuples(index=False):
        lines.append("\t".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "N.A." if not np.isfinite(v) else f"{v:.6f}"
    return str(v)


def plot_trend(report: TrendReport, x: str, path: str | Path, title: str) -> None:
    """Scatter plus least-squares line per model, written as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(report.table))
    for m, slope in report.slopes.items():
        y = report.table[m].to_numpy(np.float64)
        ax.scatter(xs, y, s=12, label=f"{m} (slope {slope:.4f})")
        ok = np.isfinite(y)
        if ok.sum() >= 2:
            ax.plot(xs, np.polyval(np.polyfit(xs[ok], y[ok], 1), xs))
    ax.set_xlabel(f"{x} bucket")
    ax.set_ylabel("RMSPE")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ------------------------------------------------------------------ experiment


@dataclass
class SeedResult:
    seed: int
    metrics: pd.DataFrame  # model, row, val_rmspe, test_rmspe
    predictions: pd.DataFrame  # long format
    audit: Audit
    liquidity: TrendReport | None
    degree: TrendReport | None
    proportions: dict[str, float]
    failures: list[dict]


@dataclass
class ExperimentResult:
    config_hash: str
    version: str
    seeds: list[SeedResult]

    def grid(self) -> pd.DataFrame:
        """One row per model, val/test per seed plus the test mean."""
        models = list(dict.fromkeys(m for s in self.seeds for m in s.metrics["model"]))
        out = pd.DataFrame({"model": [ROW_NAMES[m] for m in models]})
        tests = []
        for s in self.seeds:
            m = s.metrics.set_index("model")
            out[f"val_seed{s.seed}"] = [m["val_rmspe"].get(k, np.nan) for k in models]
            out[f"test_seed{s.seed}"] = [m["test_rmspe"].get(k, np.nan) for k in models]
            tests.append(out[f"test_seed{s.seed}"].to_numpy())
        out["test_mean"] = np.mean(tests, axis=0)
        return out

    def test_rmspe(self, model: str) -> list[float]:
        return [float(s.metrics.set_index("model")["test_rmspe"].get(model, np.nan)) for s in self.seeds]


def _prediction_frame(ds: Dataset, model: str, seed: int, pred: np.ndarray) -> pd.DataFrame:
    t = ds.table
    return pd.DataFrame(
        {
            "model": model,
            "seed": seed,
            "symbol": t["symbol"],
            "date": t["date"],
            "day_index": t["day_index"],
            "anchor": t["anchor"],
            "split": ds.split.labels(len(t)),
            "target": t["target"],
            "prediction": pred,
        }
    )


def run_seed(config: ExperimentConfig, seed: int, run_dir: Path | None = None, chash: str | None = None) -> SeedResult:
    chash = chash or config.hash()
    ds = prepare(config, seed)
    audit = Audit(ds.test_start())
    tr, va, te = ds.split.train, ds.split.val, ds.split.test
    y = ds.targets
    preds: dict[str, np.ndarray] = {}
    graphs: dict[str, Graph] = {}
    failures: list[dict] = []
    for model in config.models:
        try:
            if model == "naive":
                preds[model] = ds.naive
            elif model == "har":
                preds[model] = run_har(ds, config, audit)
            elif model == "mlp":
                preds[model] = run_mlp(ds, config, seed, audit)
            else:
                rels = config.enabled_relations if model == "full" else GTN_RELATIONS[model]
                graph, _ = relation_graph(ds, rels, config)
                if config.leak_free and rels:
                    cand = ds.candidate_times(True)
                    cand_times = [d * DAY_SECONDS + a for (d, a), c in zip(ds.grid.times, cand) if c]
                    audit.record(f"{model}:graph_candidates", cand_times)
                elif rels:
                    audit.record(f"{model}:graph_candidates", ds.node_times())
                graphs[model] = graph
                preds[model], trained = run_gtn(ds, graph, config, seed, audit, model)
                if run_dir is not None and config.save_checkpoints:
                    save_checkpoint(run_dir / f"gtn_{model}_seed{seed}.ckpt", trained)
            logger.info("seed %d %s test RMSPE %.5f", seed, model, rmspe(preds[model][te], y[te]))
        except GtnvfError as exc:
            logger.error("seed %d model %s failed: %s", seed, model, exc)
            failures.append({"seed": seed, "model": model, "error": type(exc).__name__, "message": str(exc)})
    metrics = pd.DataFrame(
        [
            {"model": m, "row": ROW_NAMES[m], "val_rmspe": rmspe(p[va], y[va]), "test_rmspe": rmspe(p[te], y[te])}
            for m, p in preds.items()
        ]
    )
    predictions = pd.concat([_prediction_frame(ds, m, seed, p) for m, p in preds.items()], ignore_index=True)

    liquidity = degree = None
    test_frame = ds.table.iloc[te][["symbol", "target"]].reset_index(drop=True)
    for m, p in preds.items():
        test_frame[m] = p[te]
    report_models = [m for m in ("naive", "full") if m in preds]
    if len(te) and report_models:
        train_days = set(ds.table["day_index"].to_numpy()[tr].tolist())
        tt = ds.turnover[ds.turnover["day_index"].isin(train_days)]
        turnover = tt.groupby("symbol")["turnover"].mean().to_dict()
        liquidity = liquidity_report(test_frame, turnover, report_models, config.liquidity_buckets)
        deg_graph = graphs.get("full")
        if deg_graph is not None:
            degree = degree_report(test_frame, deg_graph.in_degree()[te], report_models, config.degree_buckets)

    result = SeedResult(seed, metrics, predictions, audit, liquidity, degree, ds.split.proportions(), failures)
    if run_dir is not None:
        _write_seed(result, run_dir, chash)
    return result


def _header(chash: str, seed, version: str) -> dict:
    return {"config_hash": chash, "seed": seed, "version": version}


def _write_seed(r: SeedResult, run_dir: Path, chash: str) -> None:
    version = version_string()
    head = _header(chash, r.seed, version)
    (run_dir / f"metrics_seed{r.seed}.tsv").write_text(format_table(r.metrics, head))
    r.predictions.to_csv(run_dir / f"predictions_seed{r.seed}.csv", index=False, float_format="%.10g")
    (run_dir / f"audit_seed{r.seed}.json").write_text(json.dumps(r.audit.to_dict(), indent=1, sort_keys=True))
    for name, rep in (("liquidity", r.liquidity), ("degree", r.degree)):
        if rep is None:
            continue
        slopes = {f"slope_{m}": f"{s:.6f}" for m, s in rep.slopes.items()}
        (run_dir / f"{name}_seed{r.seed}.tsv").write_text(format_table(rep.table, {**head, **slopes}))
        try:
            plot_trend(rep, "turnover" if name == "liquidity" else "in-degree", run_dir / f"{name}_seed{r.seed}.svg", f"{name} seed {r.seed}")
        except ImportError:
            logger.warning("matplotlib unavailable; skipping %s plot", name)


def run_experiment(config: ExperimentConfig, run_dir: str | Path | None = None) -> ExperimentResult:
    """Run every configured model for every seed; persist results when ``run_dir`` is given.

    Model failures are recorded in the manifest and do not stop the run.
    """
    chash = config.hash()
    version = version_string()
    out = None
    if run_dir is not None:
        out = Path(run_dir)
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
    seeds = []
    for seed in config.seeds:
        seeds.append(run_seed(config, seed, out, chash))
        if out is not None:
            _write_manifest(out, chash, version, seeds)
    result = ExperimentResult(chash, version, seeds)
    if out is not None:
        (out / "metrics.tsv").write_text(format_table(result.grid(), _header(chash, list(config.seeds), version)))
    return result


def _write_manifest(out: Path, chash: str, version: str, seeds: list[SeedResult]) -> None:
    manifest = {
        "config_hash": chash,
        "version": version,
        "seeds": [s.seed for s in seeds],
        "proportions": {s.seed: s.proportions for s in seeds},
        "audit_ok": {s.seed: s.audit.ok for s in seeds},
        "failures": [f for s in seeds for f in s.failures],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def projected_sector_edges(symbols: Sequence[str], membership: Mapping[str, str], m: int) -> int:
    sizes = Counter(membership[s] for s in symbols if s in membership)
    return int(sum(g * (g - 1) for g in sizes.values()) * m)


def sector_sweep(config: ExperimentConfig, seed: int = 0, run_dir: str | Path | None = None) -> pd.DataFrame:
    """Sector-only model per granularity; oversized graphs are skipped as N.A."""
    ds = prepare(config, seed)
    te = ds.split.test
    rows = []
    for gran in config.sweep_granularities:
        membership = ds.membership_map(gran)
        if membership is None:
            raise ConfigError("the sector sweep needs a membership file")
        projected = projected_sector_edges(ds.grid.symbols, membership, ds.grid.m)
        row = {"granularity": gran, "groups": len(set(membership.values())), "edges": projected}
        if projected > config.sector_edge_cap:
            logger.warning("%s graph needs %d edges > cap %d; skipped", gran, projected, config.sector_edge_cap)
            row.update(edges="N.A.", test_rmspe="N.A.")
        else:
            graph, sets = relation_graph(ds, ("sector",), config, gran)
            row["edges"] = sum(len(s) for s in sets)
            pred, _ = run_gtn(ds, graph, config, seed)
            row["test_rmspe"] = rmspe(pred[te], ds.targets[te])
        rows.append(row)
    table = pd.DataFrame(rows)
    if run_dir is not None:
        out = Path(run_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sector_sweep.tsv").write_text(format_table(table, _header(config.hash(), seed, version_string())))
    return table


# ------------------------------------------------------------------ stage files


def save_dataset(ds: Dataset, run_dir: str | Path) -> None:
    """Persist the outputs of the ``encode`` stage.

    Files: ``buckets.npz`` (bucket store), ``features.csv`` (feature table
    with a ``split`` column), ``turnover.csv``, ``membership.csv`` and
    ``supply_chain.csv`` when available, and ``encode_manifest.json`` with
    the sampling and bucketing counters.
    """
    from .lob import save_buckets, write_table

    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_buckets(ds.buckets, out / "buckets.npz")
    table = ds.table.assign(split=ds.split.labels(len(ds.table)))
    table.to_csv(out / "features.csv", index=False, float_format="%.17g")
    ds.turnover.to_csv(out / "turnover.csv", index=False, float_format="%.17g")
    if ds.membership is not None:
        write_table(ds.membership, out / "membership.csv")
    write_table(pd.DataFrame(ds.pairs, columns=["supplier_symbol", "customer_symbol"]), out / "supply_chain.csv")
    manifest = {
        "n_buckets": len(ds.buckets),
        "counters": dict(ds.counters),
        "boundaries": list(ds.split.boundaries),
        "proportions": ds.split.proportions(),
        "flags": ds.split.flags,
        "forward": ds.forward,
    }
    (out / "encode_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(run_dir: str | Path) -> Dataset:
    from .lob import load_buckets

    out = Path(run_dir)
    if not (out / "features.csv").exists():
        raise DataError(f"{out} has no features.csv; run the encode stage first")
    table = pd.read_csv(out / "features.csv", dtype={"symbol": str, "date": str})
    manifest = json.loads((out / "encode_manifest.json").read_text())
    labels = table.pop("split").to_numpy()
    floats = list(FEATURE_NAMES) + ["target"]
    table[floats] = table[floats].astype(np.float64)
    split = Split(
        np.flatnonzero(labels == "train"),
        np.flatnonzero(labels == "val"),
        np.flatnonzero(labels == "test"),
        tuple(manifest["boundaries"]),
        manifest["flags"],
    )
    buckets = load_buckets(out / "buckets.npz")
    membership = read_table(out / "membership.csv") if (out / "membership.csv").exists() else None
    sc = read_table(out / "supply_chain.csv")
    pairs = list(zip(sc.iloc[:, 0].astype(str), sc.iloc[:, 1].astype(str)))
    turnover = pd.read_csv(out / "turnover.csv", dtype={"symbol": str, "date": str})
    naive = np.array([naive_guess(b) for b in buckets])
    return Dataset(
        table, buckets, NodeGrid.from_table(table), split, membership, pairs, turnover, naive,
        Counter(manifest["counters"]), int(manifest["forward"]),
    )


def save_graph(graph: Graph, path: str | Path) -> None:
    np.savez(
        path,
        n_nodes=np.int64(graph.n_nodes),
        indptr=graph.indptr,
        indices=graph.indices,
        relation_counts=np.array(json.dumps(graph.relation_counts, sort_keys=True)),
    )


def load_graph(path: str | Path) -> Graph:
    try:
        z = np.load(path)
    except OSError as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc
    return Graph(int(z["n_nodes"]), z["indptr"], z["indices"], json.loads(str(z["relation_counts"])))
