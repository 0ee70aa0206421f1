"""Independent brute-force references used by the unit and acceptance tests.

Written with plain loops and textbook definitions, sharing no code with the
package.
"""

import math

import numpy as np


def _median(xs):
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def _percentile(xs, q):
    # linear interpolation between closest ranks
    s = sorted(xs)
    pos = (len(s) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def brute_aggregate(xs, agg):
    xs = [float(v) for v in xs]
    n = len(xs)
    if n == 0:
        return 0.0
    mean = sum(xs) / n
    if agg == "mean":
        return mean
    if agg == "std":
        return math.sqrt(sum((v - mean) ** 2 for v in xs) / n)
    if agg == "sum":
        return sum(xs)
    if agg == "max":
        return max(xs)
    if agg == "count":
        return float(n)
    if agg == "gini":
        if mean == 0:
            return 0.0
        return sum(abs(a - b) for a in xs for b in xs) / (2 * n * n * mean)
    if agg == "pct_difference":
        return sum(1 for i in range(1, n) if xs[i] != xs[i - 1]) / n
    if agg == "realized_volatility":
        return math.sqrt(sum(v * v for v in xs) / n)
    if agg == "pct_greater_mean":
        return sum(1 for v in xs if v > mean) / n
    if agg == "pct_less_mean":
        return sum(1 for v in xs if v < mean) / n
    if agg == "pct_greater_zero":
        return sum(1 for v in xs if v > 0) / n
    if agg == "pct_less_zero":
        return sum(1 for v in xs if v < 0) / n
    if agg == "median_deviation":
        return _median([abs(v - mean) for v in xs])
    if agg == "energy":
        return sum(v * v for v in xs) / n
    if agg == "iqr":
        return _percentile(xs, 75) - _percentile(xs, 25)
    if agg == "mean_first_100":
        sub = xs[:100]
        return sum(sub) / len(sub)
    if agg == "mean_last_100":
        sub = xs[-100:]
        return sum(sub) / len(sub)
    raise KeyError(agg)


def random_series(rng, n_series=1000):
    """Series of varied length and distribution, including ties and sign changes."""
    out = []
    for i in range(n_series):
        n = int(rng.integers(1, 200))
        kind = i % 4
        if kind == 0:
            xs = rng.normal(0, 1, n)
        elif kind == 1:
            xs = rng.lognormal(0, 1, n)
        elif kind == 2:
            xs = rng.integers(0, 5, n).astype(float)
        else:
            xs = rng.normal(0, 1e-3, n)
        out.append(xs)
    return out


def dense_gt_layer(h, adj, weights, heads):
    """One graph transformer layer with explicit per-node, per-head loops.

    ``adj[i]`` lists the neighbours of node ``i``; the output keeps every row.
    """
    d_in = h.shape[1]
    w1, w2, w3, w4 = (weights[k] for k in ("W1", "W2", "W3", "W4"))
    dh = w1.shape[1]
    out = np.zeros((h.shape[0], heads * dh))
    for i in range(h.shape[0]):
        for c in range(heads):
            acc = w1[c] @ h[i]
            nb = adj[i]
            if nb:
                logits = np.array([(w3[c] @ h[i]) @ (w4[c] @ h[j]) / math.sqrt(d_in) for j in nb])
                e = np.exp(logits - logits.max())
                alpha = e / e.sum()
                for a, j in zip(alpha, nb):
                    acc = acc + a * (w2[c] @ h[j])
            out[i, c * dh : (c + 1) * dh] = acc
    return np.maximum(out, 0.0)


def dense_forward(x, symbol_ids, adj, params, n_symbols, heads, layers, target_scale):
    """Full GTN forward pass over every node with full neighbourhoods."""
    ids = np.where((symbol_ids >= 0) & (symbol_ids < n_symbols), symbol_ids, n_symbols)
    h = np.concatenate([x, params["embedding"][ids]], axis=1)
    for l in range(layers):
        h = dense_gt_layer(h, adj, {w: params[f"layer{l}.{w}"] for w in ("W1", "W2", "W3", "W4")}, heads)
    z = (h @ params["W0"]).ravel()
    return target_scale * np.log1p(np.exp(z))


def numeric_grad(f, arr, h=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def grad_rel_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
