"""Command line entry point: ``gtnvf <subcommand> --config CONFIG ...``.

Stages write into a run directory so they can be chained::

    gtnvf generate    --config c.json --out data/
    gtnvf encode      --config c.json --run-dir run/
    gtnvf build-graph --config c.json --run-dir run/
    gtnvf train       --config c.json --run-dir run/
    gtnvf evaluate    --config c.json --run-dir run/

``report`` runs the whole model grid and ablation reports in one go and
``sweep`` runs the sector-granularity sweep. Exit codes: 0 success, 2
configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import pandas as pd

from .errors import ConfigError, DataError, GtnvfError
from .graph import edges_table
from .harness import (
    ROW_NAMES,
    ExperimentConfig,
    format_table,
    load_dataset,
    load_graph,
    prepare,
    relation_graph,
    rmspe,
    run_experiment,
    run_har,
    save_dataset,
    save_graph,
    sector_sweep,
    version_string,
)
from .lob import read_table, sample_quotes, sample_trades, write_table
from .model import load_checkpoint, save_checkpoint, train
from .synthetic import generate_synthetic_lob

logger = logging.getLogger("gtnvf")


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return ExperimentConfig.load(args.config)


def _run_dir(args) -> Path:
    out = Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> None:
    cfg = _config(args)
    if cfg.synthetic is None:
        raise ConfigError("config has no synthetic spec")
    spec = replace(cfg.synthetic, seed=cfg.synthetic.seed + args.seed)
    manifest = generate_synthetic_lob(spec, args.out, raw=args.raw)
    print(f"wrote {len(manifest['dates'])} days to {args.out}")


def cmd_sample(args) -> None:
    out = Path(args.out)
    counter: Counter = Counter()
    for kind, src, fn in (("quotes", args.raw_quotes, sample_quotes), ("trades", args.raw_trades, sample_trades)):
        files = sorted(Path(src).glob("*.csv"))
        if not files:
            raise DataError(f"no .csv files in {src}")
        (out / kind).mkdir(parents=True, exist_ok=True)
        for f in files:
            raw = read_table(f)
            parts = [fn(g, counter) for _, g in raw.groupby("Symbol", sort=True)]
            write_table(pd.concat(parts, ignore_index=True), out / kind / f.name)
    (out / "sample_manifest.json").write_text(json.dumps(dict(counter), indent=1, sort_keys=True))
    print(f"sampled into {out}: {dict(counter)}")


def cmd_encode(args) -> None:
    ds = prepare(_config(args), args.seed)
    save_dataset(ds, _run_dir(args))
    print(f"encoded {len(ds.table)} buckets; split {ds.split.proportions()}")


def _relations(args, cfg: ExperimentConfig) -> tuple[str, ...]:
    return tuple(args.relations) if args.relations is not None else cfg.enabled_relations


def cmd_build_graph(args) -> None:
    cfg = _config(args)
    out = _run_dir(args)
    ds = load_dataset(out)
    graph, sets = relation_graph(ds, _relations(args, cfg), cfg)
    save_graph(graph, out / "graph.npz")
    edges_table(ds.grid, sets).to_csv(out / "edges.csv", index=False)
    print(json.dumps(graph.relation_counts, sort_keys=True))


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _run_dir(args)
    ds = load_dataset(out)
    graph = load_graph(out / "graph.npz")
    gcfg = replace(cfg.gtn, seed=args.seed)
    trained = train(ds.features, ds.symbol_ids, ds.targets, graph, ds.split.train, ds.split.val, gcfg, ds.n_symbols)
    save_checkpoint(out / "model.ckpt", trained)
    print(f"best epoch {trained.log.best_epoch}, val RMSPE {trained.log.best_val:.6f}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    out = _run_dir(args)
    ds = load_dataset(out)
    graph = load_graph(out / "graph.npz")
    trained = load_checkpoint(out / "model.ckpt")
    preds = {
        "naive": ds.naive,
        "har": run_har(ds, cfg),
        "full": trained.predict(ds.features, ds.symbol_ids, graph),
    }
    labels = ds.split.labels(len(ds.table))
    frames = []
    for m, p in preds.items():
        frames.append(
            ds.table[["symbol", "date", "day_index", "anchor", "target"]].assign(
                model=m, split=labels, prediction=p
            )
        )
    pd.concat(frames, ignore_index=True).to_csv(out / "predictions.csv", index=False, float_format="%.10g")
    y = ds.targets
    rows = [
        {"model": m, "row": ROW_NAMES[m], "val_rmspe": rmspe(p[ds.split.val], y[ds.split.val]),
         "test_rmspe": rmspe(p[ds.split.test], y[ds.split.test])}
        for m, p in preds.items()
    ]
    text = format_table(pd.DataFrame(rows), {"config_hash": cfg.hash(), "seed": args.seed, "version": version_string()})
    (out / "metrics.tsv").write_text(text)
    print(text, end="")


def cmd_report(args) -> None:
    cfg = _config(args)
    result = run_experiment(cfg, _run_dir(args))
    grid = result.grid()
    print(format_table(grid, {"config_hash": result.config_hash, "seeds": list(cfg.seeds), "version": result.version}), end="")


def cmd_sweep(args) -> None:
    table = sector_sweep(_config(args), args.seed, _run_dir(args))
    print(table.to_string(index=False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtnvf", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, run_dir=True, seed=True):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON experiment config (defaults when omitted)")
        if run_dir:
            s.add_argument("--run-dir", required=True)
        if seed:
            s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=fn)
        return s

    g = add("generate", cmd_generate, "write synthetic per-day quote/trade files", run_dir=False)
    g.add_argument("--out", required=True)
    g.add_argument("--raw", action="store_true", help="also write unsampled event files")
    s = add("sample", cmd_sample, "sample raw event files to one-second rows", run_dir=False, seed=False)
    s.add_argument("--raw-quotes", required=True)
    s.add_argument("--raw-trades", required=True)
    s.add_argument("--out", required=True)
    add("encode", cmd_encode, "bucketize and encode features")
    b = add("build-graph", cmd_build_graph, "build the relation graph", seed=False)
    b.add_argument("--relations", nargs="*", default=None, help="override the enabled relations")
    add("train", cmd_train, "train the graph transformer")
    add("evaluate", cmd_evaluate, "predict and score against baselines")
    add("report", cmd_report, "run the full model grid with ablation reports", seed=False)
    add("sweep", cmd_sweep, "sector granularity sweep")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except GtnvfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
