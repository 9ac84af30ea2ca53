"""The Finder network: attention-gated message passing over formula graphs.

All computation is composed from the primitives in :mod:`finder.tensor`.
Graphs are processed in packed batches (see :class:`finder.graph.GraphBatch`);
edge-level quantities are therefore arrays with one row per directed edge.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .graph import N_GAUSSIAN, FormulaGraph, GraphBatch
from .tensor import Tensor

ABLATIONS = ("no_self_attention", "soft_attention", "no_residuals",
             "no_pool_residuals", "sum_pool", "no_post_net")
SQRT2 = math.sqrt(2.0)


@dataclass
class FinderConfig:
    input_dim: int = 200
    hidden_dim: int = 200
    key_dim: int = 200
    n_layers: int = 2
    edge_hidden: tuple[int, ...] = (128, 64)
    message_hidden: tuple[int, ...] = (128, 64)
    pool_hidden: int = 256
    conv_filters: int = 64
    conv_kernel: int = 3
    dense_widths: tuple[int, ...] = (512, 1024, 1024, 256)
    domain: str = "formula"
    target: str = "scalar"
    n_points: int = 3000
    weight_decay: float = 1e-6
    ablations: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.edge_hidden = tuple(self.edge_hidden)
        self.message_hidden = tuple(self.message_hidden)
        self.dense_widths = tuple(self.dense_widths)
        self.ablations = tuple(sorted(set(self.ablations)))
        if self.key_dim != self.hidden_dim:
            raise ValueError("key_dim must equal hidden_dim so alignment scores gate messages element-wise")
        if not 1 <= self.n_layers <= 3:
            raise ValueError("n_layers must be 1, 2 or 3")
        if self.domain not in ("formula", "crystal"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.target not in ("scalar", "spectrum"):
            raise ValueError(f"unknown target kind {self.target!r}")
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablation flag(s) {sorted(bad)}; choose from {ABLATIONS}")
        if {"no_self_attention", "soft_attention"} <= set(self.ablations):
            raise ValueError("no_self_attention and soft_attention are exclusive")

    @property
    def out_width(self) -> int:
        return 1 if self.target == "scalar" else self.n_points

    @property
    def n_pools(self) -> int:
        single = {"no_residuals", "no_pool_residuals"} & set(self.ablations)
        return 1 if single else self.n_layers

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> FinderConfig:
        return cls(**d)


class RobustOutput(NamedTuple):
    mean: Tensor
    log_scale: Tensor


@dataclass
class Trace:
    layers: list[dict] = field(default_factory=list)
    pooled: list[np.ndarray] = field(default_factory=list)
    embedding: np.ndarray | None = None


# --- small building blocks --------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


def mlp(x: Tensor, layers) -> Tensor:
    """ReLU hidden layers, linear output layer."""
    for k, (w, b) in enumerate(layers):
        x = dense(x, w, b)
        if k < len(layers) - 1:
            x = T.relu(x)
    return x


def _segment_max(values: np.ndarray, ids: np.ndarray, num: int) -> np.ndarray:
    out = np.full((num,) + values.shape[1:], -np.inf, dtype=values.dtype)
    if len(ids) == 0:
        return out
    if np.all(ids[1:] >= ids[:-1]):
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
        out[ids[starts]] = np.maximum.reduceat(values, starts, axis=0)
    else:
        np.maximum.at(out, ids, values)
    return out


def segment_softmax(scores: Tensor, ids: np.ndarray, num: int) -> Tensor:
    """Softmax within each segment along axis 0, independently per column.

    The per-segment maximum is subtracted as a constant; the ratio is
    unchanged by that shift so gradients are unaffected.
    """
    shift = _segment_max(scores.data, ids, num)[ids]
    ex = T.exp(T.sub(scores, shift))
    den = T.segment_sum(ex, ids, num)
    return T.div(ex, T.gather(den, ids))


# --- message-passing operations ---------------------------------------------

def pair_mean(v: Tensor, src, dst) -> Tensor:
    return T.mul(T.add(T.gather(v, src), T.gather(v, dst)), 0.5)


def predict_edges(layer: dict, v: Tensor, batch: GraphBatch, pm: Tensor | None = None) -> Tensor:
    """Learned edge attributes from the pair mean and the neighbourhood-context mean."""
    if batch.domain != "formula":
        raise ValueError("edge prediction applies to the formula domain; crystal edges are distance expansions")
    if pm is None:
        pm = pair_mean(v, batch.src, batch.dst)
    context = T.segment_mean(pm, batch.src, batch.num_nodes)
    return mlp(T.concat([pm, T.gather(context, batch.src)]), layer["edge_net"])


def self_attention(layer: dict, v: Tensor, batch: GraphBatch):
    """Element-wise alignment scores.

    Returns (weights, alignment): weights has one row per ordered node pair
    (i, l) of each graph, normalised over l = 1..N for every i and component;
    alignment has one row per edge, weight_ij * F_V(v_j).
    """
    dk = layer["WQ"].shape[1]
    q, k, val = T.matmul(v, layer["WQ"]), T.matmul(v, layer["WK"]), T.matmul(v, layer["WV"])
    scores = T.mul(T.mul(T.gather(q, batch.pair_i), T.gather(k, batch.pair_l)), 1.0 / math.sqrt(dk))
    weights = segment_softmax(scores, batch.pair_i, batch.num_nodes)
    align = T.mul(T.gather(weights, batch.edge_pair), T.gather(val, batch.dst))
    return weights, align


def soft_attention(layer: dict, pm: Tensor, e: Tensor, batch: GraphBatch) -> Tensor:
    """Scalar gate per edge, softmax-normalised over each node's neighbours."""
    w, b = layer["gate"]
    return segment_softmax(dense(T.concat([pm, e]), w, b), batch.src, batch.num_nodes)


def message(layer: dict, pm: Tensor, e: Tensor, align: Tensor | None) -> Tensor:
    m = mlp(T.concat([pm, e]), layer["message_net"])
    return m if align is None else T.mul(m, align)


def aggregate_update(layer: dict, v: Tensor, messages: Tensor, batch: GraphBatch) -> Tensor:
    """v' = v W_int + mean of incoming messages (zero when there are none)."""
    return T.add(T.matmul(v, layer["W_int"]), T.segment_mean(messages, batch.src, batch.num_nodes))


def attn_pool(pool: dict, v: Tensor, batch: GraphBatch) -> Tensor:
    transformed = mlp(v, pool["transform"])
    if "gate" not in pool:
        return T.segment_sum(transformed, batch.node_graph, batch.num_graphs)
    gate = mlp(v, pool["gate"])
    w = segment_softmax(gate, batch.node_graph, batch.num_graphs)
    return T.segment_sum(T.mul(w, transformed), batch.node_graph, batch.num_graphs)


# --- the model --------------------------------------------------------------

class FinderModel:
    def __init__(self, config: FinderConfig | None = None, **kwargs):
        self.config = config or FinderConfig(**kwargs)
        self.dtype = T.default_dtype()
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(self.config.seed)
        self._build()

    # parameter construction
    def _weight(self, name, shape, fan_in=None, fan_out=None) -> Tensor:
        fan_in = fan_in or shape[0]
        fan_out = fan_out or shape[-1]
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        t = Tensor(self._rng.uniform(-lim, lim, size=shape), requires_grad=True, name=name,
                   dtype=self.dtype)
        self.params[name] = t
        return t

    def _bias(self, name, n) -> Tensor:
        t = Tensor(np.zeros(n), requires_grad=True, name=name, dtype=self.dtype)
        self.params[name] = t
        return t

    def _mlp(self, prefix, widths) -> list:
        return [(self._weight(f"{prefix}.{k}.W", (a, b)), self._bias(f"{prefix}.{k}.b", b))
                for k, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def _build(self):
        c = self.config
        flags = set(c.ablations)
        d = c.hidden_dim
        self.layers = []
        for r in range(c.n_layers):
            din = c.input_dim if r == 0 else d
            p = f"mp{r}"
            layer = {"W_int": self._weight(f"{p}.W_int", (din, d))}
            if c.domain == "formula":
                layer["edge_net"] = self._mlp(f"{p}.edge_net", (2 * din, *c.edge_hidden, N_GAUSSIAN))
            layer["message_net"] = self._mlp(f"{p}.message_net", (din + N_GAUSSIAN, *c.message_hidden, d))
            if "soft_attention" in flags:
                layer["gate"] = (self._weight(f"{p}.gate.W", (din + N_GAUSSIAN, 1)), self._bias(f"{p}.gate.b", 1))
            elif "no_self_attention" not in flags:
                for nm in ("WQ", "WK", "WV"):
                    layer[nm] = self._weight(f"{p}.{nm}", (din, c.key_dim))
            self.layers.append(layer)
        self.pools = []
        for r in range(c.n_pools):
            p = f"pool{r}"
            pool = {"transform": self._mlp(f"{p}.transform", (d, c.pool_hidden, d))}
            if "sum_pool" not in flags:
                pool["gate"] = self._mlp(f"{p}.gate", (d, c.pool_hidden, 1))
            self.pools.append(pool)
        self.post = None
        width = d
        if "no_post_net" not in flags:
            k = c.conv_kernel
            conv_w = self._weight("post.conv.W", (k, 1, c.conv_filters), fan_in=k, fan_out=k * c.conv_filters)
            conv_b = self._bias("post.conv.b", c.conv_filters)
            blocks = []
            width = d * c.conv_filters
            for i, w in enumerate(c.dense_widths):
                blk = {"W": self._weight(f"post.dense{i}.W", (width, w)), "b": self._bias(f"post.dense{i}.b", w),
                       "skip": None}
                if "no_residuals" not in flags:
                    blk["skip"] = "identity" if width == w else self._weight(f"post.dense{i}.proj", (width, w))
                blocks.append(blk)
                width = w
            self.post = {"conv": (conv_w, conv_b), "blocks": blocks}
        out = c.out_width
        self.head_mean = (self._weight("head.mean.W", (width, out)), self._bias("head.mean.b", out))
        self.head_scale = (self._weight("head.scale.W", (width, out)), self._bias("head.scale.b", out))

    # bookkeeping
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def weight_matrices(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if not n.endswith(".b")]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters {sorted(missing)[:5]}")
        for n, p in self.params.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(self.dtype).copy()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # forward
    def forward(self, graphs, trace: Trace | None = None) -> RobustOutput:
        batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.from_graphs(
            [graphs] if isinstance(graphs, FormulaGraph) else graphs)
        c = self.config
        if batch.domain != c.domain:
            raise ValueError(f"model domain {c.domain!r} does not match graph domain {batch.domain!r}")
        flags = set(c.ablations)
        v = Tensor(batch.x, dtype=self.dtype)
        edge_attr = None if batch.edge_attr is None else Tensor(batch.edge_attr, dtype=self.dtype)
        pooled = []
        for r, layer in enumerate(self.layers):
            pm = pair_mean(v, batch.src, batch.dst)
            e = predict_edges(layer, v, batch, pm) if c.domain == "formula" else edge_attr
            weights = align = None
            if "soft_attention" in flags:
                align = soft_attention(layer, pm, e, batch)
            elif "no_self_attention" not in flags:
                weights, align = self_attention(layer, v, batch)
            msgs = message(layer, pm, e, align)
            v = aggregate_update(layer, v, msgs, batch)
            if c.n_pools == c.n_layers:
                pooled.append(attn_pool(self.pools[r], v, batch))
            if trace is not None:
                trace.layers.append({"edge_attr": e.data, "attn_weights": None if weights is None else weights.data,
                                     "alignment": None if align is None else align.data,
                                     "messages": msgs.data, "nodes": v.data})
        if not pooled:
            pooled = [attn_pool(self.pools[0], v, batch)]
        vm = pooled[0]
        for extra in pooled[1:]:
            vm = T.add(vm, extra)
        if trace is not None:
            trace.pooled = [p.data for p in pooled]
            trace.embedding = vm.data
        h = self._post(vm, batch.num_graphs)
        mean = dense(h, *self.head_mean)
        log_scale = dense(h, *self.head_scale)
        if c.target == "scalar":
            mean = T.reshape(mean, (batch.num_graphs,))
            log_scale = T.reshape(log_scale, (batch.num_graphs,))
        return RobustOutput(mean, log_scale)

    __call__ = forward

    def _post(self, vm: Tensor, b: int) -> Tensor:
        if self.post is None:
            return vm
        c = self.config
        w, bias = self.post["conv"]
        h = T.relu(T.add(T.conv1d(T.reshape(vm, (b, c.hidden_dim, 1)), w), bias))
        h = T.reshape(h, (b, c.hidden_dim * c.conv_filters))
        for blk in self.post["blocks"]:
            out = T.relu(dense(h, blk["W"], blk["b"]))
            if blk["skip"] == "identity":
                out = T.add(out, h)
            elif blk["skip"] is not None:
                out = T.add(out, T.matmul(h, blk["skip"]))
            h = out
        return h

    def embed(self, graphs) -> np.ndarray:
        """Material embeddings (the combined pooled vector) without recording a tape."""
        tr = Trace()
        with T.no_grad():
            self.forward(graphs, trace=tr)
        return tr.embedding


def robust_loss(out: RobustOutput, targets, model: FinderModel | None = None,
                weight_decay: float | None = None) -> Tensor:
    """Laplace negative log-likelihood plus L2 weight decay.

    mean over all outputs of sqrt(2)|y - mu| exp(-s) + s, plus
    weight_decay * sum of squared weight-matrix entries.
    """
    y = Tensor(np.asarray(targets).reshape(out.mean.shape), dtype=out.mean.dtype)
    diff = T.sub(out.mean, y)
    absd = T.add(T.relu(diff), T.relu(T.neg(diff)))
    per = T.add(T.mul(T.mul(absd, T.exp(T.neg(out.log_scale))), SQRT2), out.log_scale)
    loss = T.mean(per)
    if model is not None:
        wd = model.config.weight_decay if weight_decay is None else weight_decay
        if wd:
            reg = None
            for w in model.weight_matrices():
                sq = T.sum(T.mul(w, w))
                reg = sq if reg is None else T.add(reg, sq)
            loss = T.add(loss, T.mul(reg, wd))
    if not np.isfinite(loss.data).all():
        mu, s = out.mean.data, out.log_scale.data
        raise T.NonFiniteError(
            f"non-finite loss: {int(np.sum(~np.isfinite(mu)))} non-finite means, "
            f"{int(np.sum(~np.isfinite(s)))} non-finite log-scales, "
            f"{int(np.sum(~np.isfinite(y.data)))} non-finite targets")
    return loss


def export_eam(model: FinderModel, graph: FormulaGraph, layer_index: int | None = None) -> np.ndarray:
    """Edge attribute matrix: entry (i, j) is the mean of e_ij at the chosen layer."""
    if graph.domain != "formula" or model.config.domain != "formula":
        raise ValueError("edge attribute matrices are defined for formula-domain graphs only")
    layer_index = model.config.n_layers - 1 if layer_index is None else layer_index
    tr = Trace()
    with T.no_grad():
        model.forward(graph, trace=tr)
    e = tr.layers[layer_index]["edge_attr"]
    n = graph.num_nodes
    eam = np.zeros((n, n))
    if len(graph.edges):
        eam[graph.edges[:, 0], graph.edges[:, 1]] = e.mean(axis=1)
    return eam
