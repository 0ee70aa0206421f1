"""Relation graphs over (stock, time) nodes.

Four relation builders produce directed edge sets (src = neighbour,
dst = the node whose query selected it). ``union_dedup`` merges them into a
single CSR adjacency keyed by destination, with sources ascending within
each row so that neighbour iteration order is canonical.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

EPS = 1e-8
RELATIONS = ("temporal_fc", "cross_fc", "sector", "supply_chain")
SIMILARITY_FEATURES = ("wap_mean_first_100", "wap_mean_last_100")


@dataclass
class NodeGrid:
    """Maps (stock index, time index) to node ids; -1 marks a missing bucket."""

    ids: np.ndarray  # (n_stocks, n_times)
    symbols: tuple[str, ...]
    times: tuple[tuple[int, int], ...]  # (day_index, anchor) per time index

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def m(self) -> int:
        return self.ids.shape[1]

    @property
    def n_nodes(self) -> int:
        return int((self.ids >= 0).sum())

    @classmethod
    def from_table(cls, table: pd.DataFrame, symbols: Sequence[str] | None = None) -> "NodeGrid":
        """Node id = row position in ``table`` (a feature table)."""
        symbols = tuple(sorted(set(table["symbol"]))) if symbols is None else tuple(symbols)
        s_of = {s: i for i, s in enumerate(symbols)}
        keys = list(zip(table["day_index"].astype(int), table["anchor"].astype(int)))
        times = tuple(sorted(set(keys)))
        t_of = {k: i for i, k in enumerate(times)}
        ids = np.full((len(symbols), len(times)), -1, dtype=np.int64)
        for row, (sym, key) in enumerate(zip(table["symbol"], keys)):
            s, t = s_of[sym], t_of[key]
            if ids[s, t] >= 0:
                raise DataError(f"duplicate bucket for {sym} at {key}")
            ids[s, t] = row
        return cls(ids, symbols, times)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(stock index, time index) per node id."""
        s, t = np.nonzero(self.ids >= 0)
        order = np.argsort(self.ids[s, t])
        return s[order], t[order]

    def values(self, column: np.ndarray) -> np.ndarray:
        """Lay a per-node column out on the grid (NaN where missing)."""
        out = np.full(self.ids.shape, np.nan)
        mask = self.ids >= 0
        out[mask] = np.asarray(column, dtype=np.float64)[self.ids[mask]]
        return out


@dataclass
class EdgeSet:
    relation: str
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        keep = src != dst
        key = np.unique(np.stack([dst[keep], src[keep]], axis=1), axis=0) if keep.any() else np.empty((0, 2), np.int64)
        self.dst, self.src = key[:, 0].copy(), key[:, 1].copy()

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class Graph:
    """Deduplicated union of edge sets, CSR keyed by destination."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    relation_counts: dict[str, int] = field(default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays in CSR order."""
        dst = np.repeat(np.arange(self.n_nodes), self.in_degree())
        return self.indices.copy(), dst

    @classmethod
    def empty(cls, n_nodes: int) -> "Graph":
        return cls(n_nodes, np.zeros(n_nodes + 1, np.int64), np.empty(0, np.int64), {})


# ------------------------------------------------------------------ distances


def rmspe_distance(a: Sequence[float], b: Sequence[float], eps: float = EPS) -> float:
    """Root mean squared percentage deviation of ``a`` from reference ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(((a - b) / (b + eps)) ** 2)))


def _pairwise_rmspe(queries: np.ndarray, refs: np.ndarray, eps: float, chunk: int = 64) -> np.ndarray:
    """D[i, j] = rmspe_distance(queries[i], refs[j]) over entries finite in both.

    Rows with no common finite entry get +inf.
    """
    out = np.empty((len(queries), len(refs)))
    rv = np.isfinite(refs)
    r = np.where(rv, refs, 0.0)
    for lo in range(0, len(queries), chunk):
        q = queries[lo : lo + chunk]
        qv = np.isfinite(q)
        both = qv[:, None, :] & rv[None, :, :]
        diff = (np.where(qv, q, 0.0)[:, None, :] - r[None, :, :]) / (r[None, :, :] + eps)
        sq = np.where(both, diff * diff, 0.0).sum(axis=2)
        cnt = both.sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[lo : lo + chunk] = np.where(cnt > 0, np.sqrt(sq / np.maximum(cnt, 1)), np.inf)
    return out


def k_smallest(dist: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest entries per row; ties go to the lower index."""
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


# ------------------------------------------------------------------ relations


def temporal_fc_edges(
    grid: NodeGrid,
    values: np.ndarray,
    k: int,
    candidate_times: np.ndarray | None = None,
    eps: float = EPS,
) -> EdgeSet:
    """Link each stock's node at t0 to its nodes at the k times most similar to t0.

    ``values`` is the (n_stocks, n_times) grid of one feature; time vectors
    are its columns. ``candidate_times`` (bool mask) restricts which times may
    be chosen as neighbours; every time is still queried.
    """
    m = grid.m
    cand = np.ones(m, bool) if candidate_times is None else np.asarray(candidate_times, bool)
    n_cand = int(cand.sum())
    if k < 1 or k >= m or k > n_cand - 1:
        raise ConfigError(f"K={k} needs to be in [1, m) with enough candidate times ({n_cand})")
    cidx = np.flatnonzero(cand)
    dist = _pairwise_rmspe(values.T, values[:, cidx].T, eps)
    # a time is never its own neighbour
    dist[np.arange(m)[cand], np.searchsorted(cidx, np.arange(m)[cand])] = np.inf
    chosen = cidx[k_smallest(dist, k)]  # (m, k)
    t0 = np.repeat(np.arange(m), k)
    tk = chosen.ravel()
    dst = grid.ids[:, t0].ravel()
    src = grid.ids[:, tk].ravel()
    ok = (dst >= 0) & (src >= 0)
    return EdgeSet("temporal_fc", src[ok], dst[ok])


def cross_fc_edges(
    grid: NodeGrid,
    values: np.ndarray,
    k: int,
    candidate_times: np.ndarray | None = None,
    eps: float = EPS,
) -> EdgeSet:
    """Link every time slice of stock s0 to the k stocks most similar to s0.

    Stock vectors are rows of ``values`` restricted to ``candidate_times``.
    """
    n, m = grid.n, grid.m
    if k >= n or k < 1:
        raise ConfigError(f"K'={k} needs to be in [1, n)")
    cand = np.ones(m, bool) if candidate_times is None else np.asarray(candidate_times, bool)
    v = values[:, cand]
    dist = _pairwise_rmspe(v, v, eps)
    np.fill_diagonal(dist, np.inf)
    chosen = k_smallest(dist, k)  # (n, k)
    s0 = np.repeat(np.arange(n), k)
    sj = chosen.ravel()
    dst = grid.ids[s0, :].ravel()
    src = grid.ids[sj, :].ravel()
    ok = (dst >= 0) & (src >= 0)
    return EdgeSet("cross_fc", src[ok], dst[ok])


def sector_edges(
    grid: NodeGrid,
    membership: Mapping[str, str],
    counter: Counter | None = None,
) -> EdgeSet:
    """All ordered pairs of distinct same-group stocks, at every time."""
    groups: dict[str, list[int]] = {}
    for s, sym in enumerate(grid.symbols):
        g = membership.get(sym)
        if g is None or (isinstance(g, float) and np.isnan(g)):
            if counter is not None:
                counter["missing_membership"] += 1
            logger.warning("symbol %s has no group; isolated in the sector relation", sym)
            continue
        groups.setdefault(str(g), []).append(s)
    src_parts, dst_parts = [], []
    for members in groups.values():
        if len(members) < 2:
            continue
        mem = np.array(members)
        a, b = np.meshgrid(mem, mem, indexing="ij")
        off = a != b
        si, sj = a[off], b[off]  # dst stock, src stock
        dst_parts.append(grid.ids[si, :].ravel())
        src_parts.append(grid.ids[sj, :].ravel())
    if not dst_parts:
        return EdgeSet("sector", np.empty(0, np.int64), np.empty(0, np.int64))
    src, dst = np.concatenate(src_parts), np.concatenate(dst_parts)
    ok = (dst >= 0) & (src >= 0)
    return EdgeSet("sector", src[ok], dst[ok])


def supply_chain_edges(
    grid: NodeGrid,
    pairs: Iterable[tuple[str, str]],
    counter: Counter | None = None,
) -> EdgeSet:
    """Both directions of every supplier-customer pair, at every time."""
    s_of = {s: i for i, s in enumerate(grid.symbols)}
    unique: set[tuple[int, int]] = set()
    for a, b in pairs:
        if a not in s_of or b not in s_of:
            if counter is not None:
                counter["unknown_pair_symbol"] += 1
            logger.warning("skipping supply-chain pair (%s, %s): unknown symbol", a, b)
            continue
        i, j = s_of[a], s_of[b]
        if i != j:
            unique.add((min(i, j), max(i, j)))
    if not unique:
        return EdgeSet("supply_chain", np.empty(0, np.int64), np.empty(0, np.int64))
    p = np.array(sorted(unique))
    si = np.concatenate([p[:, 0], p[:, 1]])
    sj = np.concatenate([p[:, 1], p[:, 0]])
    dst = grid.ids[si, :].ravel()
    src = grid.ids[sj, :].ravel()
    ok = (dst >= 0) & (src >= 0)
    return EdgeSet("supply_chain", src[ok], dst[ok])


def union_dedup(edge_sets: Sequence[EdgeSet], n_nodes: int) -> Graph:
    """Merge edge sets into one CSR graph; duplicate (src, dst) pairs collapse.

    ``relation_counts`` holds the size of each input set (summed per relation
    tag) and ``"union"`` the deduplicated total.
    """
    counts: dict[str, int] = {}
    for e in edge_sets:
        counts[e.relation] = counts.get(e.relation, 0) + len(e)
    if not edge_sets or sum(counts.values()) == 0:
        g = Graph.empty(n_nodes)
        g.relation_counts = {**counts, "union": 0}
        return g
    src = np.concatenate([e.src for e in edge_sets])
    dst = np.concatenate([e.dst for e in edge_sets])
    if len(src) and (src.max() >= n_nodes or dst.max() >= n_nodes or src.min() < 0 or dst.min() < 0):
        raise DataError("edge endpoint outside the node index space")
    key = np.unique(dst * n_nodes + src)
    dst_u, src_u = key // n_nodes, key % n_nodes
    indptr = np.zeros(n_nodes + 1, np.int64)
    np.cumsum(np.bincount(dst_u, minlength=n_nodes), out=indptr[1:])
    counts["union"] = len(key)
    return Graph(n_nodes, indptr, src_u.astype(np.int64), counts)


def edges_table(grid: NodeGrid, edge_sets: Sequence[EdgeSet]) -> pd.DataFrame:
    """Export edges as (src_s, src_t, dst_s, dst_t, relation) rows."""
    s_of, t_of = grid.node_coords()
    frames = [
        pd.DataFrame(
            {
                "src_s": s_of[e.src],
                "src_t": t_of[e.src],
                "dst_s": s_of[e.dst],
                "dst_t": t_of[e.dst],
                "relation": e.relation,
            }
        )
        for e in edge_sets
    ]
    if not frames:
        return pd.DataFrame(columns=["src_s", "src_t", "dst_s", "dst_t", "relation"])
    return pd.concat(frames, ignore_index=True)


def build_graph(
    table: pd.DataFrame,
    grid: NodeGrid,
    relations: Sequence[str],
    *,
    k_temporal: int = 2,
    k_cross: int = 2,
    membership: Mapping[str, str] | None = None,
    pairs: Iterable[tuple[str, str]] = (),
    candidate_times: np.ndarray | None = None,
    features: Sequence[str] = SIMILARITY_FEATURES,
    counter: Counter | None = None,
) -> tuple[Graph, list[EdgeSet]]:
    """Build and merge the requested relations for the nodes of ``table``."""
    unknown = set(relations) - set(RELATIONS)
    if unknown:
        raise ConfigError(f"unknown relations {sorted(unknown)}")
    sets: list[EdgeSet] = []
    if "temporal_fc" in relations:
        for f in features:
            sets.append(temporal_fc_edges(grid, grid.values(table[f].to_numpy()), k_temporal, candidate_times))
    if "cross_fc" in relations:
        for f in features:
            sets.append(cross_fc_edges(grid, grid.values(table[f].to_numpy()), k_cross, candidate_times))
    if "sector" in relations:
        if membership is None:
            raise ConfigError("sector relation needs a membership mapping")
        sets.append(sector_edges(grid, membership, counter))
    if "supply_chain" in relations:
        sets.append(supply_chain_edges(grid, pairs, counter))
    return union_dedup(sets, len(table)), sets
