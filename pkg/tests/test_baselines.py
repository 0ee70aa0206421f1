import numpy as np
import pandas as pd
import pytest

from gtnvf.baselines import (
    HarParams,
    MlpConfig,
    har_fit,
    har_fit_per_stock,
    har_lags,
    har_predict,
    mlp_baseline,
    naive_guess,
)
from gtnvf.synthetic import har_panel

from conftest import make_bucket


def test_naive_guess_is_backward_rv():
    b = make_bucket()
    r = np.diff(np.log(b.trades.vwap))
    assert naive_guess(b) == pytest.approx(np.sqrt(np.sum(r * r)))


def _panel(n_days=8, per_day=3, symbols=("A", "B"), seed=0):
    rng = np.random.default_rng(seed)
    rows = [(s, d, k, rng.uniform(0.5, 2.0)) for s in symbols for d in range(n_days) for k in range(per_day)]
    return pd.DataFrame(rows, columns=["symbol", "day_index", "anchor", "rv"])


def test_har_lags_match_brute_force():
    panel = _panel().sample(frac=1.0, random_state=1)  # order must not matter
    lagged = har_lags(panel).set_index(["symbol", "day_index", "anchor"])
    p = panel.set_index(["symbol", "day_index", "anchor"]).sort_index()
    for (s, d, k), row in lagged.iterrows():
        own = p.loc[s]
        rows = list(own.index)
        i = rows.index((d, k))
        prev = own["rv"].iloc[i - 1] if i > 0 else np.nan
        day = own.loc[d - 1]["rv"].mean() if d >= 1 else np.nan
        week = np.mean([own.loc[x]["rv"].mean() for x in range(d - 5, d)]) if d >= 5 else np.nan
        for got, want in ((row["lag_bucket"], prev), (row["lag_day"], day), (row["lag_week"], week)):
            assert (np.isnan(got) and np.isnan(want)) or got == pytest.approx(want, rel=1e-12)


def test_har_lags_recent_column():
    panel = _panel()
    panel["recent"] = np.arange(len(panel), dtype=float)
    lagged = har_lags(panel)
    np.testing.assert_array_equal(lagged["lag_bucket"].to_numpy(), lagged["recent"].to_numpy())


def test_har_recovers_coefficients():
    true = np.array([0.1, 0.3, 0.3, 0.2])
    est = har_fit(har_panel(true, n_obs=10_000, seed=3)).as_array()
    assert np.max(np.abs(est - true) / np.abs(true)) < 0.05


def test_har_per_stock():
    panel = har_panel([0.1, 0.3, 0.3, 0.2], n_obs=3000, n_stocks=3)
    fits = har_fit_per_stock(panel)
    assert sorted(fits) == ["H000", "H001", "H002"]


def test_har_rank_deficient_falls_back():
    panel = _panel()
    panel["rv"] = 1.0
    params = har_fit(panel)
    assert params.fallback
    out = har_predict(params, [1.0], [1.0], [1.0], naive=[0.7])
    assert out.tolist() == [0.7]


def test_har_predict_clamps_and_fills():
    p = HarParams(-1.0, 1.0, 0.0, 0.0)
    out = har_predict(p, [0.5, 3.0, np.nan], [1, 1, 1], [1, 1, 1], naive=[9.0, 9.0, 0.2])
    np.testing.assert_allclose(out, [0.0, 2.0, 0.2])


def test_mlp_baseline_learns_and_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.lognormal(size=(400, 5))
    y = 0.01 * (1 + x[:, 0])
    cfg = lambda: MlpConfig(hidden=(16,), epochs=30, patience=30, batch_size=64, lr=1e-2)
    a = mlp_baseline(x[:300], y[:300], cfg(), x[300:], y[300:])
    b = mlp_baseline(x[:300], y[:300], cfg(), x[300:], y[300:])
    np.testing.assert_array_equal(a.predict(x), b.predict(x))
    median_err = np.sqrt(np.mean(((np.median(y[:300]) - y[300:]) / y[300:]) ** 2))
    assert a.log.best_val < 0.5 * median_err
