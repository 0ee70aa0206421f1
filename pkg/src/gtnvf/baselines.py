"""Reference predictors: naive guess, intraday HAR-RV and a feed-forward MLP."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EPS
from .lob import Bucket, log_returns, realized_volatility
from .model import FeatureScaler, TrainLog, config_hash, fit, rmspe_loss

logger = logging.getLogger(__name__)

BUCKETS_PER_DAY = 6
WEEK_DAYS = 5


def naive_guess(bucket: Bucket) -> float:
    """Backward-window realized volatility of trade-VWAP returns."""
    r = log_returns(bucket.trades.vwap)
    if r.size == 0:
        logger.warning("no backward returns for %s %s %d; predicting 0", bucket.symbol, bucket.date, bucket.anchor)
        return 0.0
    return realized_volatility(r)


# ------------------------------------------------------------------ HAR-RV


@dataclass
class HarParams:
    intercept: float
    beta_bucket: float
    beta_day: float
    beta_week: float
    fallback: bool = False  # rank-deficient fit: predict with the naive guess

    def as_array(self) -> np.ndarray:
        return np.array([self.intercept, self.beta_bucket, self.beta_day, self.beta_week])


def har_lags(panel: pd.DataFrame) -> pd.DataFrame:
    """Lag regressors for every row of an RV panel.

    ``panel`` has columns ``symbol``, ``day_index``, ``anchor``, ``rv``. Per
    symbol, ``lag_bucket`` is the previous row's RV, ``lag_day`` the mean RV
    of the previous day and ``lag_week`` the mean RV over the previous five
    days. Lags without enough history are NaN.

    An optional ``recent`` column replaces the previous-row lag: bucket
    panels pass the RV of the window right before each anchor there, the
    most recent period as in daily HAR.
    """
    p = panel.sort_values(["symbol", "day_index", "anchor"], kind="stable").copy()
    if "recent" in p.columns:
        p["lag_bucket"] = p["recent"]
    else:
        p["lag_bucket"] = p.groupby("symbol")["rv"].shift(1)
    daily = p.groupby(["symbol", "day_index"])["rv"].agg(["sum", "count"]).reset_index()
    pieces = []
    for sym, d in daily.groupby("symbol"):
        days = d["day_index"].to_numpy()
        s, c = d["sum"].to_numpy(np.float64), d["count"].to_numpy(np.float64)
        cs, cc = np.concatenate([[0.0], np.cumsum(s)]), np.concatenate([[0.0], np.cumsum(c)])
        prev = np.minimum(np.searchsorted(days, days - 1), len(days) - 1)
        lag_day = np.where(days[prev] == days - 1, s[prev] / c[prev], np.nan)
        here = np.arange(len(days))
        wlo = np.searchsorted(days, days - WEEK_DAYS)
        full_week = (days - WEEK_DAYS >= days[0]) & (here > wlo)
        with np.errstate(invalid="ignore", divide="ignore"):
            lag_week = np.where(full_week, (cs[here] - cs[wlo]) / (cc[here] - cc[wlo]), np.nan)
        pieces.append(pd.DataFrame({"symbol": sym, "day_index": days, "lag_day": lag_day, "lag_week": lag_week}))
    lags = pd.concat(pieces, ignore_index=True) if pieces else pd.DataFrame(columns=["symbol", "day_index", "lag_day", "lag_week"])
    out = p.merge(lags, on=["symbol", "day_index"], how="left")
    out.index = p.index
    return out.loc[panel.index]


def _design(lagged: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    ok = lagged[["lag_bucket", "lag_day", "lag_week"]].notna().all(axis=1).to_numpy()
    rows = lagged.loc[ok]
    x = np.column_stack([np.ones(len(rows)), rows["lag_bucket"], rows["lag_day"], rows["lag_week"]])
    return x, rows["rv"].to_numpy(np.float64)


def har_fit(panel: pd.DataFrame) -> HarParams:
    """Global OLS fit of RV on (1, previous bucket, previous day, previous week).

    Rows lacking a full week of history are excluded. A rank-deficient design
    keeps the minimum-norm solution but flags ``fallback``.
    """
    x, y = _design(har_lags(panel))
    if len(y) == 0:
        logger.warning("HAR design is empty; falling back to the naive guess")
        return HarParams(0.0, 1.0, 0.0, 0.0, fallback=True)
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    params = HarParams(*map(float, beta))
    if rank < x.shape[1]:
        logger.warning("HAR design has rank %d < 4; falling back to the naive guess", rank)
        params.fallback = True
    return params


def har_fit_per_stock(panel: pd.DataFrame) -> dict[str, HarParams]:
    return {sym: har_fit(g) for sym, g in panel.groupby("symbol")}


def har_predict(params: HarParams, lag_bucket, lag_day, lag_week, naive=None) -> np.ndarray:
    """Linear HAR forecast clamped at 0.

    Rows with a missing lag, or any row when ``params.fallback`` is set, use
    ``naive`` (defaulting to ``lag_bucket``).
    """
    lb, ld, lw = (np.asarray(v, dtype=np.float64) for v in (lag_bucket, lag_day, lag_week))
    fallback = lb if naive is None else np.asarray(naive, dtype=np.float64)
    raw = params.intercept + params.beta_bucket * lb + params.beta_day * ld + params.beta_week * lw
    missing = np.isnan(lb) | np.isnan(ld) | np.isnan(lw)
    out = np.where(missing | params.fallback, fallback, np.maximum(raw, 0.0))
    return np.nan_to_num(out, nan=0.0)


# ------------------------------------------------------------------ MLP


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = (128, 64, 32)
    lr: float = 1e-3
    epochs: int = 50
    patience: int = 10
    batch_size: int = 512
    seed: int = 0
    eps: float = EPS
    target_scale: float = 1.0
    auto_target_scale: bool = True

    def hash(self) -> str:
        return config_hash(asdict(self))


class Mlp:
    """Fully connected ReLU network with a softplus output."""

    def __init__(self, n_in: int, config: MlpConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params: dict[str, Tensor] = {}
        sizes = (n_in, *config.hidden, 1)
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            bound = 1.0 / np.sqrt(a)
            self.params[f"W{i}"] = Tensor(rng.uniform(-bound, bound, (a, b)), True)
            self.params[f"b{i}"] = Tensor(np.zeros(b), True)
        self.n_layers = len(sizes) - 1

    def forward(self, x: np.ndarray) -> Tensor:
        h = Tensor(x)
        for i in range(self.n_layers):
            h = ad.add(ad.matmul(h, self.params[f"W{i}"]), self.params[f"b{i}"])
            if i < self.n_layers - 1:
                h = ad.relu(h)
        return ad.scale(ad.softplus(ad.reshape(h, (len(x),))), self.config.target_scale)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.forward(x).data


@dataclass
class TrainedMlp:
    mlp: Mlp
    scaler: FeatureScaler
    log: TrainLog = field(repr=False)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.mlp.predict(self.scaler.transform(features))


def mlp_baseline(
    features: np.ndarray,
    targets: np.ndarray,
    config: MlpConfig,
    val_features: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
) -> TrainedMlp:
    """Train the MLP on RMSPE; early stopping on the validation rows if given."""
    scaler = FeatureScaler.fit(features)
    x = scaler.transform(features)
    targets = np.asarray(targets, dtype=np.float64)
    if config.auto_target_scale and len(targets):
        config.target_scale = float(np.median(targets))
    mlp = Mlp(x.shape[1], config)

    def batch_loss(batch, rng):
        return rmspe_loss(mlp.forward(x[batch]), targets[batch], config.eps)

    val_fn = None
    if val_features is not None and len(val_features):
        xv = scaler.transform(val_features)

        def val_fn():
            return rmspe_loss(mlp.predict(xv), val_targets, config.eps)

    log = fit(
        mlp.params,
        batch_loss,
        np.arange(len(x)),
        val_fn,
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        patience=config.patience,
        seed=config.seed,
        config_hash=config.hash(),
    )
    return TrainedMlp(mlp, scaler, log)
