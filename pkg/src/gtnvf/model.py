"""Graph transformer network for volatility forecasting.

A node's input is its scaled numeric feature vector concatenated with a
learned symbol embedding. Each layer computes, per head ``c``::

    out_c = W1_c h_self + sum_j alpha_jc W2_c h_j
    alpha_jc = softmax_j((W3_c h_self) . (W4_c h_j) / sqrt(d_in))

concatenates the heads and applies ReLU. The output head is
``scale * softplus(W0 . h)``. There are no bias terms. The self node enters
only through ``W1``; it is not part of the attention softmax.

Mini-batches run on sampled computation blocks: for a batch of target nodes,
each layer (from the top down) samples up to ``fanout`` in-neighbours per
node without replacement.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericalError
from .graph import EPS, Graph

logger = logging.getLogger(__name__)


@dataclass
class GtnConfig:
    layers: int = 3
    heads: int = 8
    width: int = 128
    k_cat: int = 32
    fanout: int | None = 15  # per layer; None keeps full neighbourhoods
    lr: float = 1e-3
    eps: float = EPS
    epochs: int = 50
    patience: int = 10
    batch_size: int = 512
    seed: int = 0
    target_scale: float = 1.0
    auto_target_scale: bool = True  # train() sets target_scale to the median training target
    embed_std: float = 0.1

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("need at least one layer and one head")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by heads {self.heads}")

    @property
    def head_width(self) -> int:
        return self.width // self.heads

    def fanouts(self) -> list[int | None]:
        return [self.fanout] * self.layers

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# ------------------------------------------------------------------ scaling


@dataclass
class FeatureScaler:
    """Per-column transform fitted on training rows only.

    Nonnegative columns are log-transformed (with an offset of 5% of their
    median, or of their mean when the median is 0) before standardising;
    other columns are only standardised. Results are clipped to +-8.
    """

    log_mask: np.ndarray
    offset: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    clip: float = 8.0

    @classmethod
    def fit(cls, x: np.ndarray) -> "FeatureScaler":
        x = np.asarray(x, dtype=np.float64)
        log_mask = np.all(x >= 0, axis=0)
        med = np.median(x, axis=0)
        base = np.where(med > 0, med, x.mean(axis=0))
        offset = np.where(log_mask, np.maximum(0.05 * base, 1e-12), 0.0)
        z = np.where(log_mask, np.log(np.where(log_mask, x, 0.0) + offset + (~log_mask)), x)
        std = z.std(axis=0)
        return cls(log_mask, offset, z.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        safe = np.where(self.log_mask, np.maximum(x, 0.0), 0.0)
        z = np.where(self.log_mask, np.log(safe + self.offset + (~self.log_mask)), x)
        return np.clip((z - self.mean) / self.std, -self.clip, self.clip)

    @classmethod
    def identity(cls, n: int) -> "FeatureScaler":
        return cls(np.zeros(n, bool), np.zeros(n), np.zeros(n), np.ones(n))


# ------------------------------------------------------------------ blocks


@dataclass
class Block:
    """One layer of a computation graph.

    The layer reads hidden states of ``n_src`` input nodes; the first
    ``n_dst`` of them are the layer's output nodes. Edges are sorted by
    (dst, global src id) and delimited per dst by ``ptr``.
    """

    n_dst: int
    n_src: int
    src: np.ndarray
    dst: np.ndarray
    ptr: np.ndarray


def sample_blocks(
    graph: Graph,
    batch: np.ndarray,
    fanouts: Sequence[int | None],
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[Block]]:
    """Build per-layer blocks for ``batch`` (unique node ids).

    Returns the input node ids (for layer 0) and the blocks ordered from the
    first layer to the last. ``None`` fanouts keep every neighbour.
    """
    dst_nodes = np.asarray(batch, dtype=np.int64)
    lookup = np.full(graph.n_nodes, -1, dtype=np.int64)
    blocks: list[Block] = []
    for fanout in reversed(list(fanouts)):
        starts = graph.indptr[dst_nodes]
        counts = graph.indptr[dst_nodes + 1] - starts
        n_e = int(counts.sum())
        e_dst = np.repeat(np.arange(len(dst_nodes)), counts)
        seg_start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pos = np.arange(n_e) - seg_start[e_dst] + starts[e_dst]
        e_src = graph.indices[pos]
        if fanout is not None and n_e and counts.max() > fanout:
            if rng is None:
                raise ConfigError("neighbour sampling needs a random generator")
            keys = rng.random(n_e)
            order = np.lexsort((keys, e_dst))
            rank = np.arange(n_e) - seg_start[e_dst[order]]
            sel = np.sort(order[rank < fanout])
            e_dst, e_src = e_dst[sel], e_src[sel]
            counts = np.bincount(e_dst, minlength=len(dst_nodes))
        extra = np.setdiff1d(e_src, dst_nodes)
        src_nodes = np.concatenate([dst_nodes, extra])
        lookup[src_nodes] = np.arange(len(src_nodes))
        ptr = np.zeros(len(dst_nodes) + 1, np.int64)
        np.cumsum(counts, out=ptr[1:])
        blocks.append(Block(len(dst_nodes), len(src_nodes), lookup[e_src], e_dst, ptr))
        lookup[src_nodes] = -1
        dst_nodes = src_nodes
    blocks.reverse()
    return dst_nodes, blocks


# ------------------------------------------------------------------ layers


def attention_coeffs(h_target, h_neighbors, w3, w4, d_in: int | None = None) -> np.ndarray:
    """Single-head attention weights of ``h_target`` over the rows of ``h_neighbors``."""
    h_neighbors = np.atleast_2d(np.asarray(h_neighbors, dtype=np.float64))
    if len(h_neighbors) == 0:
        raise DataError("attention over an empty neighbourhood")
    d_in = len(h_target) if d_in is None else d_in
    logits = (h_neighbors @ np.asarray(w4).T) @ (np.asarray(w3) @ h_target) / np.sqrt(d_in)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _project(h: Tensor, w: Tensor) -> Tensor:
    # w is (C, head_width, d_in); heads land in consecutive column groups
    c, dh, d_in = w.shape
    return ad.matmul(h, ad.transpose(ad.reshape(w, (c * dh, d_in))))


def gt_layer(h: Tensor, block: Block, weights: dict[str, Tensor], heads: int) -> Tensor:
    """One multi-head graph transformer layer followed by ReLU."""
    d_in = h.shape[1]
    h_dst = ad.slice_rows(h, block.n_dst)
    out = _project(h_dst, weights["W1"])
    if len(block.src):
        dh = weights["W1"].shape[1]
        n_e = len(block.src)
        q = ad.take_rows(_project(h_dst, weights["W3"]), block.dst)
        k = ad.take_rows(_project(h, weights["W4"]), block.src)
        v = ad.take_rows(_project(h, weights["W2"]), block.src)
        logits = ad.scale(ad.sum(ad.reshape(ad.mul(q, k), (n_e, heads, dh)), axis=2), 1.0 / np.sqrt(d_in))
        alpha = ad.segment_softmax(logits, block.ptr)
        msg = ad.mul(ad.reshape(alpha, (n_e, heads, 1)), ad.reshape(v, (n_e, heads, dh)))
        out = ad.add(out, ad.segment_sum(ad.reshape(msg, (n_e, heads * dh)), block.ptr))
    return ad.relu(out)


def layer_logits(h: np.ndarray, block: Block, weights: dict[str, np.ndarray], heads: int) -> np.ndarray:
    """Pre-softmax attention logits (n_edges, heads) of one layer."""
    d_in = h.shape[1]
    w3, w4 = weights["W3"], weights["W4"]
    q = np.einsum("cki,ni->nck", w3, h[: block.n_dst])[block.dst]
    k = np.einsum("cki,ni->nck", w4, h)[block.src]
    return (q * k).sum(axis=2) / np.sqrt(d_in)


# ------------------------------------------------------------------ model


class GtnModel:
    """Parameters plus forward pass. Symbol ids >= n_symbols map to a reserved row."""

    def __init__(self, config: GtnConfig, n_numeric: int, n_symbols: int, seed: int | None = None):
        self.config = config
        self.n_numeric = n_numeric
        self.n_symbols = n_symbols
        self.params = init_params(config, n_numeric, n_symbols, config.seed if seed is None else seed)

    @property
    def unknown_row(self) -> int:
        return self.n_symbols

    def layer_weights(self, l: int) -> dict[str, Tensor]:
        return {w: self.params[f"layer{l}.{w}"] for w in ("W1", "W2", "W3", "W4")}

    def embed(self, symbol_ids) -> Tensor:
        ids = np.asarray(symbol_ids, dtype=np.int64)
        ids = np.where((ids >= 0) & (ids < self.n_symbols), ids, self.unknown_row)
        return ad.take_rows(self.params["embedding"], ids)

    def forward(
        self,
        x: np.ndarray,
        symbol_ids: np.ndarray,
        graph: Graph,
        batch: Sequence[int],
        fanouts: Sequence[int | None] | None = None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Predictions for ``batch`` (order-aligned, duplicates allowed).

        ``x`` is the scaled numeric feature matrix of every node in ``graph``.
        """
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size == 0:
            raise DataError("empty batch")
        if batch.min() < 0 or batch.max() >= graph.n_nodes:
            raise DataError("batch references nodes outside the graph")
        uniq, inverse = np.unique(batch, return_inverse=True)
        fanouts = [None] * self.config.layers if fanouts is None else list(fanouts)
        inputs, blocks = sample_blocks(graph, uniq, fanouts, rng)
        h = ad.concat([Tensor(x[inputs]), self.embed(symbol_ids[inputs])], axis=1)
        for l, block in enumerate(blocks):
            h = gt_layer(h, block, self.layer_weights(l), self.config.heads)
        z = ad.reshape(ad.matmul(h, self.params["W0"]), (len(uniq),))
        pred = ad.scale(ad.softplus(z), self.config.target_scale)
        if len(inverse) != len(uniq) or np.any(inverse != np.arange(len(uniq))):
            pred = ad.take_rows(pred, inverse)
        return pred

    def predict(self, x, symbol_ids, graph, nodes=None, chunk: int | None = None) -> np.ndarray:
        """Full-neighbourhood predictions without recording gradients."""
        nodes = np.arange(graph.n_nodes) if nodes is None else np.asarray(nodes)
        chunk = len(nodes) if chunk is None else chunk
        out = []
        with ad.no_grad():
            for lo in range(0, len(nodes), chunk):
                out.append(self.forward(x, symbol_ids, graph, nodes[lo : lo + chunk]).data)
        return np.concatenate(out) if out else np.empty(0)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)


def init_params(config: GtnConfig, n_numeric: int, n_symbols: int, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {"embedding": Tensor(rng.normal(0.0, config.embed_std, (n_symbols + 1, config.k_cat)), True)}
    d_in = n_numeric + config.k_cat
    for l in range(config.layers):
        bound = 1.0 / np.sqrt(d_in)
        for w in ("W1", "W2", "W3", "W4"):
            shape = (config.heads, config.head_width, d_in)
            params[f"layer{l}.{w}"] = Tensor(rng.uniform(-bound, bound, shape), True)
        d_in = config.width
    params["W0"] = Tensor(rng.uniform(-1 / np.sqrt(d_in), 1 / np.sqrt(d_in), (d_in, 1)), True)
    return params


def rmspe_loss(pred, target, eps: float = EPS):
    """RMSPE; returns a Tensor for Tensor input and a float otherwise."""
    target = np.asarray(target, dtype=np.float64)
    if target.size == 0:
        raise DataError("empty batch")
    if isinstance(pred, Tensor):
        if pred.shape != target.shape:
            raise DataError("prediction/target length mismatch")
        return ad.rmspe(pred, target, eps)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError("prediction/target length mismatch")
    return float(np.sqrt(np.mean(((pred - target) / (target + eps)) ** 2)))


# ------------------------------------------------------------------ training


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad**2
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainLog:
    seed: int
    config_hash: str
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    aborted: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit(
    params: dict[str, Tensor],
    batch_loss: Callable[[np.ndarray, np.random.Generator], Tensor],
    train_idx: np.ndarray,
    val_loss: Callable[[], float] | None,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    patience: int,
    seed: int,
    config_hash: str = "",
) -> TrainLog:
    """Generic Adam loop with early stopping on ``val_loss``.

    The best parameters (by validation loss, or the last epoch when there is
    no validation callback) are loaded back into ``params`` before returning.
    A non-finite loss or gradient restores the last good state and raises
    ``NumericalError``.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(params, lr)
    log = TrainLog(seed, config_hash)
    best = {k: p.data.copy() for k, p in params.items()}
    stale = 0
    for epoch in range(epochs):
        order = rng.permutation(np.asarray(train_idx))
        losses = []
        for lo in range(0, len(order), batch_size):
            opt.zero_grad()
            loss = batch_loss(order[lo : lo + batch_size], rng)
            grads_ok = np.isfinite(loss.data)
            if grads_ok:
                loss.backward()
                grads_ok = all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values())
            if not grads_ok:
                for k, p in params.items():
                    p.data = best[k].copy()
                log.aborted = f"non-finite loss or gradient in epoch {epoch}"
                err = NumericalError(log.aborted)
                err.log = log  # type: ignore[attr-defined]
                raise err
            opt.step()
            losses.append(float(loss.data))
        log.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if val_loss is None:
            best = {k: p.data.copy() for k, p in params.items()}
            log.best_epoch = epoch
            continue
        v = float(val_loss())
        log.val_loss.append(v)
        logger.info("epoch %d train %.5f val %.5f", epoch, log.train_loss[-1], v)
        if v < log.best_val:
            log.best_val, log.best_epoch, stale = v, epoch, 0
            best = {k: p.data.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= patience:
                break
    for k, p in params.items():
        p.data = best[k]
        p.grad = None
    return log


@dataclass
class TrainedGtn:
    model: GtnModel
    scaler: FeatureScaler
    log: TrainLog

    def predict(self, features: np.ndarray, symbol_ids: np.ndarray, graph: Graph, nodes=None) -> np.ndarray:
        return self.model.predict(self.scaler.transform(features), symbol_ids, graph, nodes)


def train(
    features: np.ndarray,
    symbol_ids: np.ndarray,
    targets: np.ndarray,
    graph: Graph,
    train_idx: np.ndarray,
    val_idx: np.ndarray | None,
    config: GtnConfig,
    n_symbols: int,
) -> TrainedGtn:
    """Fit a GTN on ``train_idx`` nodes; select parameters by validation RMSPE.

    ``features`` are raw numeric features of every graph node; the scaler and
    the target scale are fitted on training nodes only.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    scaler = FeatureScaler.fit(features[train_idx])
    x = scaler.transform(features)
    if config.auto_target_scale and len(train_idx):
        config.target_scale = float(np.median(targets[train_idx]))
    model = GtnModel(config, features.shape[1], n_symbols)
    fanouts = config.fanouts()

    def batch_loss(batch, rng):
        return rmspe_loss(model.forward(x, symbol_ids, graph, batch, fanouts, rng), targets[batch], config.eps)

    val_fn = None
    if val_idx is not None and len(val_idx):

        def val_fn():
            return rmspe_loss(model.predict(x, symbol_ids, graph, val_idx), targets[val_idx], config.eps)

    log = fit(
        model.params,
        batch_loss,
        train_idx,
        val_fn,
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        patience=config.patience,
        seed=config.seed,
        config_hash=config.hash(),
    )
    return TrainedGtn(model, scaler, log)


# ------------------------------------------------------------------ checkpoints

MAGIC = b"GTNVFCKP"
VERSION = 1


def save_checkpoint(path: str | Path, trained: TrainedGtn) -> None:
    """Write a little-endian binary checkpoint.

    Layout: 8-byte magic ``GTNVFCKP``; u32 version; u32 length + UTF-8 JSON
    header (config, n_numeric, n_symbols); u32 tensor count, then per tensor
    u16 name length, UTF-8 name, u8 ndim, u32 per dimension, float64 data in
    C order; finally u32 length + UTF-8 JSON training log.
    """
    m = trained.model
    header = {"config": m.config.to_dict(), "n_numeric": m.n_numeric, "n_symbols": m.n_symbols}
    tensors = dict(m.state())
    s = trained.scaler
    tensors.update(
        {
            "scaler.log_mask": s.log_mask.astype(np.float64),
            "scaler.offset": s.offset,
            "scaler.mean": s.mean,
            "scaler.std": s.std,
        }
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_json(fh, header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
        _write_json(fh, trained.log.to_dict())


def load_checkpoint(path: str | Path) -> TrainedGtn:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DataError(f"{path} is not a GTN checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        header = _read_json(fh)
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        log = TrainLog(**_read_json(fh))
    config = GtnConfig(**header["config"])
    model = GtnModel(config, header["n_numeric"], header["n_symbols"])
    model.load_state({k: v for k, v in tensors.items() if not k.startswith("scaler.")})
    scaler = FeatureScaler(
        tensors["scaler.log_mask"].astype(bool),
        tensors["scaler.offset"],
        tensors["scaler.mean"],
        tensors["scaler.std"],
    )
    return TrainedGtn(model, scaler, log)


def _write_json(fh, obj) -> None:
    raw = json.dumps(obj, sort_keys=True).encode()
    fh.write(struct.pack("<I", len(raw)) + raw)


def _read_json(fh):
    (n,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(n).decode())
