"""Anatomy of the relation graph built over (stock, time) nodes.

Shows how many edges each relation contributes, how the union collapses
duplicates, and which nodes feed a single target node.

    python3 demos/graph_anatomy.py
"""

import logging

import numpy as np

from gtnvf.harness import ExperimentConfig, prepare, relation_graph
from gtnvf.synthetic import SyntheticSpec

logging.basicConfig(level=logging.WARNING)

config = ExperimentConfig(synthetic=SyntheticSpec(n_stocks=10, n_days=10, n_supply_pairs=5), seeds=(0,))
ds = prepare(config, 0)
print(f"{ds.grid.n} stocks x {ds.grid.m} times = {ds.grid.n_nodes} nodes")

graph, sets = relation_graph(ds, config.enabled_relations, config)
for rel, count in graph.relation_counts.items():
    print(f"  {rel:>12}: {count}")

deg = graph.in_degree()
print(f"in-degree min {deg.min()}, median {int(np.median(deg))}, max {deg.max()}")

# neighbours of the last test node, labelled by stock and time
node = int(ds.split.test[-1])
s_of, t_of = ds.grid.node_coords()
print(f"node {node} = {ds.grid.symbols[s_of[node]]} at {ds.grid.times[t_of[node]]} receives from:")
for src in graph.neighbors(node)[:12]:
    print(f"  {ds.grid.symbols[s_of[src]]} at {ds.grid.times[t_of[src]]}")
