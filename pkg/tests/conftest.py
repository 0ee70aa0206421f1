import numpy as np
import pytest

from gtnvf.harness import ExperimentConfig, prepare
from gtnvf.lob import Bucket, QuoteSeries, TradeSeries
from gtnvf.model import GtnConfig
from gtnvf.baselines import MlpConfig
from gtnvf.synthetic import SyntheticSpec

TINY_GTN = dict(layers=2, heads=2, width=8, k_cat=4, fanout=5, batch_size=128, epochs=2, patience=2)


def small_config(**over) -> ExperimentConfig:
    base = dict(
        synthetic=SyntheticSpec(n_stocks=8, n_days=12, n_supply_pairs=4, seed=0),
        gtn=GtnConfig(**TINY_GTN),
        mlp=MlpConfig(hidden=(16, 8), epochs=2, patience=2),
        seeds=(0,),
        liquidity_buckets=4,
        degree_buckets=4,
        save_checkpoints=False,
    )
    base.update(over)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return prepare(small_config(), 0)


def make_bucket(n_q=40, n_t=30, backward=600, anchor=1800, seed=0, symbol="AAA") -> Bucket:
    """Random but valid bucket with sorted, unique seconds in the backward window."""
    rng = np.random.default_rng(seed)
    lo = anchor - backward
    qs = np.sort(rng.choice(np.arange(lo, anchor), n_q, replace=False))
    ts = np.sort(rng.choice(np.arange(lo, anchor), n_t, replace=False))
    mid = 50 * np.exp(np.cumsum(rng.normal(0, 1e-3, n_q)))
    bid = np.round(mid - 0.01, 2)
    ask = bid + 0.01 * rng.integers(1, 4, n_q)
    q = QuoteSeries(qs, bid, rng.integers(1, 500, n_q).astype(float), ask, rng.integers(1, 500, n_q).astype(float))
    vwap = 50 * np.exp(np.cumsum(rng.normal(0, 1e-3, n_t)))
    t = TradeSeries(ts, rng.integers(1, 5, n_t), rng.integers(1, 900, n_t).astype(float), vwap)
    return Bucket(symbol, "2017-01-03", anchor, backward, 600, q, t, 0.01, 0)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
