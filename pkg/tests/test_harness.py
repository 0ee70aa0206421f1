import json

import numpy as np
import pandas as pd
import pytest

from gtnvf.errors import ConfigError, DataError
from gtnvf.graph import Graph
from gtnvf.harness import (
    Audit,
    ExperimentConfig,
    default_boundaries,
    degree_report,
    format_table,
    in_neighborhood,
    liquidity_report,
    load_dataset,
    load_graph,
    projected_sector_edges,
    relation_graph,
    run_experiment,
    run_har,
    save_dataset,
    save_graph,
    sector_sweep,
    split_chronological,
)
from gtnvf.synthetic import SyntheticSpec

from conftest import small_config


def test_split_example():
    dates = ["2017-01-03"] * 2 + ["2017-01-04"] * 2 + ["2017-01-05"] * 2
    s = split_chronological(dates, ("2017-01-04", "2017-01-05"))
    assert s.train.tolist() == [0, 1]
    assert s.val.tolist() == [2, 3]
    assert s.test.tolist() == [4, 5]
    assert s.labels(6).tolist() == ["train"] * 2 + ["val"] * 2 + ["test"] * 2


def test_split_empty_partitions():
    dates = ["2017-01-03", "2017-01-04"]
    s = split_chronological(dates, ("2017-01-04", "2017-02-01"))
    assert s.flags == ["empty test split"]
    with pytest.raises(ConfigError):
        split_chronological(dates, ("2017-01-01", "2017-01-02"))
    with pytest.raises(ConfigError):
        split_chronological(dates, ("2017-01-05", "2017-01-04"))


def test_default_boundaries_fractions():
    days = [f"2017-02-{d:02d}" for d in range(1, 21)]
    b0, b1 = default_boundaries(days)
    assert days.index(b0) == 12 and days.index(b1) == 16
    with pytest.raises(ConfigError):
        default_boundaries(days[:2])


def test_audit():
    a = Audit(test_start=100)
    a.record("x", [10, 50])
    a.record("y", [])
    assert a.ok and a.max_touched == 50
    a.record("z", [100])
    assert not a.ok
    assert a.to_dict()["touched"] == {"x": 50, "z": 100}


def test_in_neighborhood():
    # 0 <- 1 <- 2 <- 3
    g = Graph(4, np.array([0, 1, 2, 3, 3]), np.array([1, 2, 3]))
    assert in_neighborhood(g, np.array([0]), 0).tolist() == [0]
    assert in_neighborhood(g, np.array([0]), 2).tolist() == [0, 1, 2]


def test_liquidity_report_trivial():
    frame = pd.DataFrame(
        {
            "symbol": ["A", "A", "B", "B", "C", "C"],
            "target": [1.0] * 6,
            "naive": [1.3, 0.7, 1.2, 1.2, 1.1, 0.9],
        }
    )
    rep = liquidity_report(frame, {"A": 1.0, "B": 2.0, "C": 3.0}, ["naive"], n_buckets=3)
    np.testing.assert_allclose(rep.table["naive"], [0.3, 0.2, 0.1])
    assert rep.slopes["naive"] == pytest.approx(-0.1)
    with pytest.raises(DataError):
        liquidity_report(frame, {"A": 1.0}, ["naive"])


def test_degree_report_isolated_bucket():
    frame = pd.DataFrame({"target": [1.0] * 4, "m": [2.0, 1.5, 1.2, 1.1]})
    rep = degree_report(frame, np.array([0, 1, 2, 3]), ["m"], n_buckets=4)
    assert rep.table["degree_lo"].tolist() == [0, 1, 2, 3]
    assert rep.slopes["m"] < 0


def test_format_table_is_fixed():
    t = pd.DataFrame({"model": ["a", "b"], "x": [0.1234567, np.nan]})
    text = format_table(t, {"config_hash": "abc", "seed": 0})
    assert text == "# config_hash=abc\n# seed=0\nmodel\tx\na\t0.123457\nb\tN.A.\n"


def test_config_roundtrip_and_validation(tmp_path):
    cfg = small_config()
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.hash() == cfg.hash()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(models=("nope",))
    with pytest.raises(ConfigError):
        ExperimentConfig(relations={"nope": True})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"gtn": {"bogus": 1}})
    assert ExperimentConfig(quotes_dir="q", trades_dir="t").synthetic is None
    with pytest.raises(ConfigError):
        ExperimentConfig(synthetic=None)


def test_prepare_small(small_dataset):
    ds = small_dataset
    assert len(ds.table) == 8 * 12 * 6
    assert ds.features.shape == (len(ds.table), 73)
    assert ds.test_start() == ds.table["day_index"].to_numpy()[ds.split.test].min() * 86400
    cand = ds.candidate_times(True)
    train_days = set(ds.table["day_index"].to_numpy()[ds.split.train])
    assert all(c == (d in train_days) for c, (d, _) in zip(cand, ds.grid.times))


def test_leak_free_graph_never_links_test_nodes_to_training(small_dataset):
    ds = small_dataset
    graph, _ = relation_graph(ds, ("temporal_fc",), small_config())
    src, dst = graph.edges()
    day = ds.table["day_index"].to_numpy()
    train_days = set(day[ds.split.train])
    assert set(day[src]) <= train_days


def test_har_predictions_cover_all_nodes(small_dataset):
    pred = run_har(small_dataset, small_config())
    assert pred.shape == (len(small_dataset.table),)
    assert np.all(pred >= 0)


def test_stage_files_roundtrip(small_dataset, tmp_path):
    save_dataset(small_dataset, tmp_path)
    back = load_dataset(tmp_path)
    pd.testing.assert_frame_equal(back.table, small_dataset.table)
    np.testing.assert_array_equal(back.naive, small_dataset.naive)
    np.testing.assert_array_equal(back.split.test, small_dataset.split.test)
    assert back.pairs == small_dataset.pairs
    graph, _ = relation_graph(small_dataset, ("sector", "supply_chain"), small_config())
    save_graph(graph, tmp_path / "g.npz")
    g2 = load_graph(tmp_path / "g.npz")
    np.testing.assert_array_equal(g2.indices, graph.indices)
    assert g2.relation_counts == graph.relation_counts
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")


def test_run_experiment_writes_outputs(tmp_path):
    cfg = small_config(models=("naive", "har", "full"))
    res = run_experiment(cfg, tmp_path)
    grid = res.grid()
    assert grid["model"].tolist() == ["Naive Guess", "HAR-RV", "GTN-VF"]
    for name in ("config.json", "manifest.json", "metrics.tsv", "metrics_seed0.tsv", "predictions_seed0.csv",
                 "audit_seed0.json", "liquidity_seed0.tsv", "liquidity_seed0.svg", "degree_seed0.tsv"):
        assert (tmp_path / name).exists(), name
    audit = json.loads((tmp_path / "audit_seed0.json").read_text())
    assert audit["ok"] and audit["max_touched"] < audit["test_start"]
    assert json.loads((tmp_path / "manifest.json").read_text())["failures"] == []


def test_sector_sweep_caps_edges():
    cfg = small_config(sector_edge_cap=1000, sweep_granularities=("sector", "sub_industry"))
    d = small_dataset_membership(cfg)
    projected = projected_sector_edges(*d)
    assert projected > 1000
    table = sector_sweep(cfg, 0)
    assert table.loc[0, "test_rmspe"] == "N.A."
    assert isinstance(table.loc[1, "test_rmspe"], float)


def small_dataset_membership(cfg):
    from gtnvf.synthetic import make_universe

    u = make_universe(cfg.synthetic)
    return u.symbols, u.groups("sector"), 12 * 6


def test_experiment_config_defaults_match_desk():
    cfg = ExperimentConfig()
    assert cfg.forward == 600 and cfg.k_temporal == 2 and cfg.k_cross == 2
    assert cfg.synthetic == SyntheticSpec()
    assert cfg.enabled_relations == ("temporal_fc", "cross_fc", "sector", "supply_chain")
