"""Model-level checks shared by the unit tests and the acceptance run."""

import numpy as np

from gtnvf import autodiff as ad
from gtnvf.autodiff import Tensor
from gtnvf.graph import Graph
from gtnvf.model import GtnConfig, GtnModel, layer_logits, rmspe_loss, sample_blocks

from oracles import dense_forward, grad_rel_error, numeric_grad


def random_graph(n, p, rng, min_degree=1):
    """Random directed graph without self loops; every node gets >= min_degree in-edges."""
    rows = []
    for i in range(n):
        nb = [j for j in range(n) if j != i and rng.random() < p]
        while len(nb) < min_degree:
            j = int(rng.integers(n))
            if j != i and j not in nb:
                nb.append(j)
        rows.append(sorted(nb))
    indptr = np.cumsum([0] + [len(r) for r in rows])
    return Graph(n, indptr.astype(np.int64), np.array([j for r in rows for j in r], np.int64)), rows


def tiny_model(n_nodes, n_feat, layers, heads, width, seed, n_symbols=3):
    rng = np.random.default_rng(seed)
    cfg = GtnConfig(layers=layers, heads=heads, width=width, k_cat=2, fanout=None, target_scale=0.5, embed_std=0.5)
    model = GtnModel(cfg, n_feat, n_symbols, seed=seed)
    x = rng.normal(size=(n_nodes, n_feat))
    sid = rng.integers(0, n_symbols + 1, n_nodes)  # includes the unknown id
    y = rng.uniform(0.2, 1.0, n_nodes)
    return model, x, sid, y


def gradient_check_error(layers=2, heads=2, n_nodes=8, width=None, seed=0):
    """Max relative error of backprop vs central differences over every GTN parameter."""
    rng = np.random.default_rng(seed)
    width = 2 * heads if width is None else width
    model, x, sid, y = tiny_model(n_nodes, 3, layers, heads, width, seed)
    graph, _ = random_graph(n_nodes, 0.4, rng)
    batch = np.arange(n_nodes)

    def loss_value():
        with ad.no_grad():
            return float(rmspe_loss(model.forward(x, sid, graph, batch), y).data)

    loss = rmspe_loss(model.forward(x, sid, graph, batch), y)
    loss.backward()
    worst = 0.0
    for name, p in model.params.items():
        analytic = p.grad.copy()
        worst = max(worst, grad_rel_error(analytic, numeric_grad(loss_value, p.data)))
    return worst


def attention_invariants(seed=0, n_nodes=12, heads=4):
    """(softmax sum error, shift-invariance error, neighbour-permutation error)."""
    rng = np.random.default_rng(seed)
    model, x, sid, _ = tiny_model(n_nodes, 4, 1, heads, 2 * heads, seed)
    graph, rows = random_graph(n_nodes, 0.5, rng, min_degree=2)
    inputs, (block,) = sample_blocks(graph, np.arange(n_nodes), [None])
    h = np.concatenate([x[inputs], model.embed(sid[inputs]).data], axis=1)
    w = {k: v.data for k, v in model.layer_weights(0).items()}
    logits = layer_logits(h, block, w, heads)
    alpha = ad.segment_softmax(Tensor(logits), block.ptr).data
    sums = ad.segment_sum(Tensor(alpha), block.ptr).data
    sum_err = float(np.max(np.abs(sums - 1.0)))

    shift = rng.normal(0, 50, (n_nodes, heads))[ad.segment_ids(block.ptr)]
    shifted = ad.segment_softmax(Tensor(logits + shift), block.ptr).data
    shift_err = float(np.max(np.abs(shifted - alpha)))

    base = model.predict(x, sid, graph)
    perm_rows = [list(rng.permutation(r)) for r in rows]
    permuted = Graph(n_nodes, graph.indptr, np.array([j for r in perm_rows for j in r], np.int64))
    perm_err = float(np.max(np.abs(model.predict(x, sid, permuted) - base)))
    return sum_err, shift_err, perm_err


def dense_oracle_error(n_nodes=20, layers=2, heads=4, width=8, seed=0):
    """Max |sparse - dense| prediction difference on a random graph."""
    rng = np.random.default_rng(seed)
    model, x, sid, _ = tiny_model(n_nodes, 5, layers, heads, width, seed)
    graph, rows = random_graph(n_nodes, 0.3, rng, min_degree=0)
    sparse = model.predict(x, sid, graph)
    params = {k: v.data for k, v in model.params.items()}
    dense = dense_forward(x, sid, rows, params, model.n_symbols, heads, layers, model.config.target_scale)
    return float(np.max(np.abs(sparse - dense)))
