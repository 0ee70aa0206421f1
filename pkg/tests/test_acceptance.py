"""Acceptance criteria, one printed PASS/FAIL line each.

The desk experiment (30 synthetic stocks, 60 days, 600 s horizon, seeds
0-2) is run once per session and shared by the ranking, liquidity and audit
criteria. Lines are repeated in the pytest terminal summary.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from gtnvf.baselines import har_fit
from gtnvf.features import FEATURE_NAMES, aggregate, AGGREGATOR_NAMES
from gtnvf.harness import ExperimentConfig, prepare, relation_graph, run_experiment, run_seed
from gtnvf.synthetic import har_panel

from checks import attention_invariants, dense_oracle_error, gradient_check_error
from conftest import record_criterion, small_config
from oracles import brute_aggregate, random_series

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
DESK_MODELS = ("naive", "har", "mlp", "vanilla", "full")


@pytest.fixture(scope="module")
def desk_config():
    return ExperimentConfig.load(DESK)


@pytest.fixture(scope="module")
def desk_runs(desk_config):
    cfg = desk_config
    assert cfg.models == DESK_MODELS
    out = {}
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        r = run_seed(cfg, seed)
        out[seed] = (r, time.perf_counter() - t0)
    return out


def test_criterion_01_feature_names():
    expected_head = ("wap_mean", "wap_std", "wap_gini", "wap_mean_first_100", "wap_mean_last_100")
    ok = len(FEATURE_NAMES) == 73 and len(set(FEATURE_NAMES)) == 73 and FEATURE_NAMES[:5] == expected_head
    record_criterion(1, "73 features with stable names", ok, f"{len(FEATURE_NAMES)} unique names")
    assert ok


def test_criterion_02_aggregators_vs_brute_force():
    series = random_series(np.random.default_rng(2024), 1000)
    worst = 0.0
    for xs in series:
        for agg in AGGREGATOR_NAMES:
            want = brute_aggregate(xs, agg)
            worst = max(worst, abs(aggregate(xs, agg) - want) / max(1.0, abs(want)))
    ok = worst < 1e-10
    record_criterion(2, "aggregators match brute force on 1000 series", ok, f"max error {worst:.2e}")
    assert ok


@pytest.mark.slow
def test_criterion_03_edge_counts(desk_config):
    ds = prepare(desk_config, 0)
    n, m = ds.grid.n, ds.grid.m
    K = desk_config.k_temporal
    Kp = desk_config.k_cross
    graph, _ = relation_graph(ds, ("temporal_fc", "cross_fc", "sector", "supply_chain"), desk_config)
    rc = graph.relation_counts
    sizes = {}
    for g in ds.membership_map("sector").values():
        sizes[g] = sizes.get(g, 0) + 1
    expected = {
        "temporal_fc": 2 * K * n * m,
        "cross_fc": 2 * Kp * n * m,
        "sector": sum(g * (g - 1) for g in sizes.values()) * m,
        "supply_chain": 2 * len(set(tuple(sorted(p)) for p in ds.pairs)) * m,
    }
    got = {k: rc[k] for k in expected}
    ok = (n, m, K, Kp) == (30, 360, 2, 2) and got == expected
    record_criterion(3, "edge-count identities at n=30, m=360, K=K'=2", ok, f"got {got}, expected {expected}")
    assert ok


def test_criterion_04_gradient_check():
    errs = {(L, C): gradient_check_error(L, C, n_nodes=8, width=C * 2 if C < 8 else 8, seed=L * 10 + C)
            for L, C in ((1, 1), (2, 4), (3, 8))}
    worst = max(errs.values())
    ok = worst < 1e-4
    record_criterion(4, "gradient check on <=8 nodes, L<=3, C<=8", ok, f"max relative error {worst:.2e}")
    assert ok


def test_criterion_05_attention_invariants():
    res = [attention_invariants(seed) for seed in range(5)]
    s, sh, p = (max(r[i] for r in res) for i in range(3))
    ok = s < 1e-12 and sh < 1e-12 and p < 1e-10
    record_criterion(5, "softmax sum, shift and permutation invariance", ok, f"sum {s:.1e}, shift {sh:.1e}, perm {p:.1e}")
    assert ok


def test_criterion_06_dense_oracle():
    err = max(dense_oracle_error(n_nodes=20, seed=s) for s in range(3))
    ok = err < 1e-10
    record_criterion(6, "dense-oracle equivalence on 20 nodes", ok, f"max error {err:.1e}")
    assert ok


def _test_rmspe(result, model):
    return float(result.metrics.set_index("model")["test_rmspe"][model])


@pytest.mark.slow
def test_criterion_07_ranking(desk_runs):
    ordered, gains, times = 0, [], []
    for seed, (r, secs) in desk_runs.items():
        full, vanilla, naive = (_test_rmspe(r, m) for m in ("full", "vanilla", "naive"))
        ordered += full < vanilla < naive
        gains.append((naive - full) / naive)
        times.append(secs)
    ok = ordered >= 2 and np.mean(gains) >= 0.03 and max(times) < 600
    detail = f"ordered in {ordered}/3 seeds, mean gain over naive {np.mean(gains):.1%}, max {max(times):.0f} s/seed"
    record_criterion(7, "full < vanilla < naive on the synthetic desk", ok, detail)
    assert ok


def test_criterion_08_har_recovery():
    true = np.array([0.05, 0.4, 0.3, 0.2])
    est = har_fit(har_panel(true, n_obs=10_000, seed=11)).as_array()
    worst = float(np.max(np.abs(est - true) / np.abs(true)))
    ok = worst < 0.05
    record_criterion(8, "HAR coefficients recovered at n=10000", ok, f"max relative error {worst:.2%}")
    assert ok


@pytest.mark.slow
def test_criterion_09_liquidity_slopes(desk_runs):
    hits = 0
    slopes = []
    for seed, (r, _) in desk_runs.items():
        s = r.liquidity.slopes
        slopes.append((round(s["naive"], 4), round(s["full"], 4)))
        hits += s["naive"] < 0 and s["full"] < 0
    ok = hits >= 2
    record_criterion(9, "negative RMSPE-vs-turnover slope for naive and GTN", ok, f"{hits}/3 seeds, slopes {slopes}")
    assert ok


@pytest.mark.slow
def test_criterion_10_leak_free_audit(desk_runs):
    audits = [r.audit for r, _ in desk_runs.values()]
    ok = all(a.ok for a in audits) and all(a.touched for a in audits)
    detail = ", ".join(f"max {a.max_touched} < start {a.test_start}" for a in audits)
    record_criterion(10, "leak-free audit", ok, detail)
    assert ok


def test_criterion_11_byte_identical_tables(tmp_path):
    cfg = small_config(models=("naive", "har", "mlp", "vanilla", "full"), seeds=(0, 1))
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.tsv"))
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = len(names) >= 3 and all(same)
    record_criterion(11, "byte-identical metric tables across runs", ok, f"{sum(same)}/{len(names)} tables identical")
    assert ok


@pytest.mark.slow
def test_naive_is_weakest_baseline(desk_runs):
    # invariant rather than a numbered criterion: majority over seeds
    wins = 0
    for r, _ in desk_runs.values():
        naive = _test_rmspe(r, "naive")
        wins += all(_test_rmspe(r, m) < naive for m in ("har", "mlp", "vanilla", "full"))
    assert wins >= 2
