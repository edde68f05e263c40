"""Recurrent-state graph neural network with node and edge output heads.

Each vertex state starts as its one-hot label (zero-padded to ``state_dim``)
and is updated synchronously by a two-layer perceptron

    s_i^k = F(s_i^{k-1}, a * sum_{j in Ne(i)} (s_j^{k-1}, e_ij))

with a = 1 (sum) or 1/|Ne(i)| (avg), until the largest per-vertex change in a
graph drops below ``epsilon`` or ``k_max`` iterations have run. Several graphs
are relaxed together as one disjoint union; each graph stops on its own
criterion. Gradients are exact, obtained by backpropagating through every
unrolled iteration.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .graph import MolecularGraph

CHECKPOINT_FORMAT = "seqmolgen-gnn"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("state_W1", "state_b1", "state_W2", "state_b2", "out_W1", "out_b1", "out_W2", "out_b2")


@dataclass
class GnnModel:
    head_kind: str  # "node" | "edge"
    aggregation: str  # "sum" | "avg"
    k_max: int
    epsilon: float
    state_dim: int
    label_dim: int
    edge_dim: int
    n_classes: int
    hu_state: int
    hu_out: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.head_kind not in ("node", "edge"):
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if self.aggregation not in ("sum", "avg"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.state_dim < self.label_dim:
            raise ValueError("state_dim must be at least the vertex label width")
        for name, shape in self.shapes().items():
            if name in self.params and self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def out_in_dim(self) -> int:
        d = self.state_dim
        return d if self.head_kind == "node" else 2 * d + self.edge_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, e = self.state_dim, self.edge_dim
        return {
            "state_W1": (2 * d + e, self.hu_state),
            "state_b1": (self.hu_state,),
            "state_W2": (self.hu_state, d),
            "state_b2": (d,),
            "out_W1": (self.out_in_dim, self.hu_out),
            "out_b1": (self.hu_out,),
            "out_W2": (self.hu_out, self.n_classes),
            "out_b2": (self.n_classes,),
        }

    @classmethod
    def create(cls, rng: np.random.Generator, **kwargs) -> GnnModel:
        """Glorot-uniform weights, zero biases."""
        model = cls(**kwargs)
        for name, shape in model.shapes().items():
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                model.params[name] = rng.uniform(-limit, limit, size=shape)
            else:
                model.params[name] = np.zeros(shape)
        return model

    def copy(self) -> GnnModel:
        return GnnModel(**{**self.config(), "params": {k: v.copy() for k, v in self.params.items()}})

    def config(self) -> dict:
        return {
            "head_kind": self.head_kind,
            "aggregation": self.aggregation,
            "k_max": self.k_max,
            "epsilon": self.epsilon,
            "state_dim": self.state_dim,
            "label_dim": self.label_dim,
            "edge_dim": self.edge_dim,
            "n_classes": self.n_classes,
            "hu_state": self.hu_state,
            "hu_out": self.hu_out,
        }

    # --- checkpoint ---

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            **self.config(),
            "shapes": {k: list(v) for k, v in self.shapes().items()},
            "weights": {k: self.params[k].ravel(order="C").tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GnnModel:
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported checkpoint")
        cfg = {k: doc[k] for k in cls.__dataclass_fields__ if k != "params"}
        params = {
            k: np.asarray(doc["weights"][k], dtype=np.float64).reshape(doc["shapes"][k])
            for k in PARAM_NAMES
        }
        return cls(**cfg, params=params)

    def save(self, path: str | os.PathLike, **extra) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".partial")
        tmp.write_text(json.dumps({**self.to_dict(), **extra}, sort_keys=True))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> GnnModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- batching ---------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of graphs, laid out for message passing."""

    init: np.ndarray  # (N, label_dim)
    node_graph: np.ndarray  # (N,)
    graph_start: np.ndarray  # (G,)
    src: np.ndarray  # (M,) directed message edges j -> i
    dst: np.ndarray
    coef: np.ndarray
    edge_feat: np.ndarray  # (M, edge_dim)

    @property
    def n_nodes(self) -> int:
        return len(self.node_graph)

    @property
    def n_graphs(self) -> int:
        return len(self.graph_start)

    @classmethod
    def from_graphs(
        cls,
        graphs: Sequence[MolecularGraph],
        label_dim: int,
        edge_dim: int,
        aggregation: str,
        focus: Sequence[int] | None = None,
    ) -> GraphBatch:
        """``focus`` (one vertex per graph) sets the extra flag at index
        ``label_dim - 1``; vertex types then use the first ``label_dim - 1``
        slots."""
        sizes = np.fromiter((g.n_vertices for g in graphs), dtype=np.intp, count=len(graphs))
        n_edges = np.fromiter((g.n_edges for g in graphs), dtype=np.intp, count=len(graphs))
        starts = np.cumsum(sizes) - sizes
        types = np.fromiter(chain.from_iterable(g.vertex_types for g in graphs), dtype=np.intp)
        flat = np.fromiter(chain.from_iterable(chain.from_iterable(g.edges for g in graphs)), dtype=np.intp)
        flat = flat.reshape(-1, 3)
        off = np.repeat(starts, n_edges)
        n = len(types)
        node_graph = np.repeat(np.arange(len(graphs), dtype=np.intp), sizes)
        init = np.zeros((n, label_dim))
        init[np.arange(n), types] = 1.0
        if focus is not None:
            init[starts + np.asarray(focus, dtype=np.intp), label_dim - 1] = 1.0
        u, v, t = flat[:, 0] + off, flat[:, 1] + off, flat[:, 2]
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        tt = np.concatenate([t, t])
        if aggregation == "avg":
            deg = np.bincount(dst, minlength=n).astype(np.float64)
            coef = 1.0 / deg[dst]
        else:
            coef = np.ones(len(dst))
        edge_feat = np.zeros((len(dst), edge_dim))
        edge_feat[np.arange(len(dst)), tt] = 1.0
        return cls(
            init=init,
            node_graph=node_graph,
            graph_start=starts,
            src=src,
            dst=dst,
            coef=coef,
            edge_feat=edge_feat,
        )


@dataclass
class Relaxation:
    states: np.ndarray  # (N, state_dim) at each graph's own k*
    k_star: np.ndarray  # (G,)
    trajectory: list  # (S_prev, msg_states, hidden, active) per iteration
    msg_edges: np.ndarray


def relax(model: GnnModel, batch: GraphBatch) -> Relaxation:
    p = model.params
    d = model.state_dim
    n = batch.n_nodes
    w1 = p["state_W1"]
    w_self, w_msg, w_edge = w1[:d], w1[d:2 * d], w1[2 * d:]
    s = np.zeros((n, d))
    s[:, : batch.init.shape[1]] = batch.init
    msg_edges = kernels.aggregate(np.arange(len(batch.dst)), batch.dst, batch.coef, batch.edge_feat, n)
    edge_term = msg_edges @ w_edge + p["state_b1"]
    active_graph = np.ones(batch.n_graphs, dtype=bool)
    k_star = np.zeros(batch.n_graphs, dtype=np.intp)
    trajectory = []
    for k in range(1, model.k_max + 1):
        msg = kernels.aggregate(batch.src, batch.dst, batch.coef, s, n)
        hidden = np.tanh(s @ w_self + msg @ w_msg + edge_term)
        s_new = hidden @ p["state_W2"] + p["state_b2"]
        active = active_graph[batch.node_graph]
        trajectory.append((s, msg, hidden, active))
        change = np.sqrt(((s_new - s) ** 2).sum(axis=1))
        worst = np.maximum.reduceat(change, batch.graph_start) if n else change
        k_star[active_graph] = k
        s = np.where(active[:, None], s_new, s)
        active_graph &= ~(worst < model.epsilon)
        if not active_graph.any():
            break
    return Relaxation(s, k_star, trajectory, msg_edges)


def relax_backward(model: GnnModel, batch: GraphBatch, rel: Relaxation, d_states: np.ndarray,
                   grads: dict[str, np.ndarray]) -> np.ndarray:
    """Accumulate state-network gradients into ``grads``; returns d(initial states)."""
    p = model.params
    d = model.state_dim
    n = batch.n_nodes
    w1 = p["state_W1"]
    g_w1 = grads["state_W1"]
    ds = d_states
    for s_prev, msg, hidden, active in reversed(rel.trajectory):
        mask = active[:, None]
        ds_new = np.where(mask, ds, 0.0)
        grads["state_W2"] += hidden.T @ ds_new
        grads["state_b2"] += ds_new.sum(axis=0)
        da = (ds_new @ p["state_W2"].T) * (1.0 - hidden * hidden)
        g_w1[:d] += s_prev.T @ da
        g_w1[d:2 * d] += msg.T @ da
        g_w1[2 * d:] += rel.msg_edges.T @ da
        grads["state_b1"] += da.sum(axis=0)
        d_self = da @ w1[:d].T
        d_msg = da @ w1[d:2 * d].T
        # transpose of the aggregation: messages flow back from dst to src
        ds = np.where(mask, 0.0, ds) + d_self + kernels.aggregate(batch.dst, batch.src, batch.coef, d_msg, n)
    return ds


# --- output heads -----------------------------------------------------------

@dataclass
class HeadCache:
    inputs: np.ndarray
    hidden: np.ndarray
    index: tuple[np.ndarray, ...]


def _head_forward(model: GnnModel, z: np.ndarray):
    p = model.params
    hidden = np.tanh(z @ p["out_W1"] + p["out_b1"])
    return hidden @ p["out_W2"] + p["out_b2"], hidden


def node_logits(model: GnnModel, states: np.ndarray, idx) -> tuple[np.ndarray, HeadCache]:
    if model.head_kind != "node":
        raise ValueError("node readout on an edge-head model")
    idx = np.asarray(idx, dtype=np.intp)
    z = states[idx]
    logits, hidden = _head_forward(model, z)
    return logits, HeadCache(z, hidden, (idx,))


def edge_logits(model: GnnModel, states: np.ndarray, u, v, labels) -> tuple[np.ndarray, HeadCache]:
    """Logits for edges (u, v); ``u`` is the earlier / expanded vertex."""
    if model.head_kind != "edge":
        raise ValueError("edge readout on a node-head model")
    u = np.asarray(u, dtype=np.intp)
    v = np.asarray(v, dtype=np.intp)
    onehot = np.zeros((len(u), model.edge_dim))
    onehot[np.arange(len(u)), np.asarray(labels, dtype=np.intp)] = 1.0
    z = np.concatenate([states[u], states[v], onehot], axis=1)
    logits, hidden = _head_forward(model, z)
    return logits, HeadCache(z, hidden, (u, v))


def head_backward(model: GnnModel, cache: HeadCache, d_logits: np.ndarray, n_nodes: int,
                  grads: dict[str, np.ndarray]) -> np.ndarray:
    p = model.params
    grads["out_W2"] += cache.hidden.T @ d_logits
    grads["out_b2"] += d_logits.sum(axis=0)
    da = (d_logits @ p["out_W2"].T) * (1.0 - cache.hidden ** 2)
    grads["out_W1"] += cache.inputs.T @ da
    grads["out_b1"] += da.sum(axis=0)
    dz = da @ p["out_W1"].T
    d = model.state_dim
    ones = np.ones(len(dz))
    if model.head_kind == "node":
        (idx,) = cache.index
        return kernels.aggregate(np.arange(len(dz)), idx, ones, dz, n_nodes)
    u, v = cache.index
    rows = np.arange(len(dz))
    return (kernels.aggregate(rows, u, ones, dz[:, :d], n_nodes)
            + kernels.aggregate(rows, v, ones, dz[:, d:2 * d], n_nodes))


def zero_grads(model: GnnModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def backward(model: GnnModel, batch: GraphBatch, rel: Relaxation, cache: HeadCache,
             d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a loss with respect to every parameter, given
    d(loss)/d(logits), unrolling all relaxation iterations."""
    grads = zero_grads(model)
    d_states = head_backward(model, cache, d_logits, batch.n_nodes, grads)
    relax_backward(model, batch, rel, d_states, grads)
    return grads


# --- single-graph conveniences ----------------------------------------------

def state_relax(g: MolecularGraph, model: GnnModel, focus: int | None = None) -> tuple[np.ndarray, int]:
    batch = GraphBatch.from_graphs([g], model.label_dim, model.edge_dim, model.aggregation,
                                   None if focus is None else [focus])
    rel = relax(model, batch)
    return rel.states, int(rel.k_star[0])


def node_head(states: np.ndarray, v, model: GnnModel) -> np.ndarray:
    """Logits at vertex ``v``; a sequence of vertices gives one row each."""
    logits = node_logits(model, states, np.atleast_1d(v))[0]
    return logits[0] if np.ndim(v) == 0 else logits


def edge_head(states: np.ndarray, edge: tuple[int, int], label: int, model: GnnModel) -> np.ndarray:
    return edge_logits(model, states, [edge[0]], [edge[1]], [label])[0][0]


# --- loss, sampling, optimization -------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def xent_loss(logits, target: int, class_weights=None) -> float:
    """-log softmax(logits)[target], times class_weights[target] if given."""
    loss = -float(log_softmax(np.asarray(logits, dtype=np.float64))[target])
    if class_weights is not None:
        loss *= float(class_weights[target])
    return loss


def batch_xent(logits: np.ndarray, targets: np.ndarray, class_weights=None,
               noise: np.ndarray | None = None, tau: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient with respect to ``logits``.

    With ``noise`` (Gumbel samples) the loss is taken on the relaxed sample
    softmax((logits + noise) / tau).
    """
    z = logits if noise is None else (logits + noise) / tau
    scale = 1.0 if noise is None else 1.0 / tau
    lp = log_softmax(z)
    r = np.arange(len(targets))
    w = np.ones(len(targets)) if class_weights is None else np.asarray(class_weights)[targets]
    loss = float(-(w * lp[r, targets]).sum() / max(len(targets), 1))
    d = np.exp(lp)
    d[r, targets] -= 1.0
    d *= (w * scale / max(len(targets), 1))[:, None]
    return loss, d


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, None)
    return -np.log(-np.log(u))


def gumbel_sample(logits, tau: float, rng: np.random.Generator):
    """Gumbel-softmax draw: (hard class index, relaxed probability vector).

    Works on the last axis, so a stack of logit rows gives one draw per row.
    The hard index is exactly distributed as softmax(logits) for any tau.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    y = (logits + gumbel_noise(logits.shape, rng)) / tau
    soft = softmax(y)
    hard = np.argmax(y, axis=-1)
    return (int(hard) if hard.ndim == 0 else hard), soft


@dataclass
class AnnealSchedule:
    total_epochs: int
    tau_max: float = 5.0
    tau_min: float = 1.0

    def __post_init__(self):
        if not self.tau_max >= self.tau_min > 0:
            raise ValueError("need tau_max >= tau_min > 0")


def anneal_tau(epoch: int, schedule: AnnealSchedule) -> float:
    """Linear descent from tau_max at epoch 0 to tau_min at the last epoch."""
    if schedule.total_epochs <= 1:
        return schedule.tau_min if epoch > 0 else schedule.tau_max
    frac = epoch / (schedule.total_epochs - 1)
    tau = schedule.tau_max - (schedule.tau_max - schedule.tau_min) * frac
    return float(min(max(tau, schedule.tau_min), schedule.tau_max))


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(model: GnnModel, grads: dict[str, np.ndarray], opt: OptimizerState) -> GnnModel:
    """One bias-corrected Adam update, applied in place."""
    if set(grads) != set(model.params):
        raise ValueError("gradient keys do not match model parameters")
    for k, g in grads.items():
        if g.shape != model.params[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, parameter {model.params[k].shape}")
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for k, g in grads.items():
        m = opt.m.setdefault(k, np.zeros_like(g))
        v = opt.v.setdefault(k, np.zeros_like(g))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        model.params[k] -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return model
