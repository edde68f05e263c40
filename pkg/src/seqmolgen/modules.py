"""The three decision modules: configuration, training and inference.

m1  node generation    node head at the focus vertex, classes {stop} + vertex types
m2  first edge         edge head on (focus, new vertex), classes = edge types
m3  extra links        edge head on every provisional edge (k, new vertex),
                       classes {disconnected} + edge types
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gnn
from .gnn import AnnealSchedule, GnnModel, GraphBatch, OptimizerState
from .graph import MolecularGraph
from .ingest import DatasetSpec
from .sequencer import StepExample

log = logging.getLogger(__name__)


class ModuleKind(str, Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"

    @property
    def head_kind(self) -> str:
        return "node" if self is ModuleKind.M1 else "edge"

    def n_classes(self, spec: DatasetSpec) -> int:
        if self is ModuleKind.M1:
            return 1 + spec.n_vertex_types
        if self is ModuleKind.M2:
            return spec.n_edge_types
        return 1 + spec.n_edge_types


@dataclass(frozen=True)
class ModuleConfig:
    kind: ModuleKind
    aggregation: str
    epochs: int
    lr: float
    k_max: int
    hu_state: int
    hu_out: int
    class_weighted: bool = False
    tau_max: float = 5.0
    tau_min: float = 1.0
    state_dim: int = 10
    epsilon: float = 1e-3
    seed: int = 0
    focus_flag: bool = False
    gumbel_training: bool = True
    preset: str | None = None

    def with_overrides(self, **kw) -> ModuleConfig:
        if "kind" in kw:
            kw["kind"] = ModuleKind(kw["kind"])
        return replace(self, **kw)


def _p(kind, agg, epochs, lr, k_max, hs, ho, weighted=False):
    return dict(kind=ModuleKind(kind), aggregation=agg, epochs=epochs, lr=lr, k_max=k_max,
                hu_state=hs, hu_out=ho, class_weighted=weighted)


# hyperparameter presets: aggregation, epochs, learning rate, k_max, HU_state, HU_out
PRESETS: dict[str, dict] = {
    "M1-I": _p("m1", "sum", 700, 4e-3, 5, 30, 50),
    "M1-II": _p("m1", "sum", 1500, 2e-3, 6, 100, 60),
    "M1-III": _p("m1", "sum", 2000, 1e-5, 6, 100, 60),
    "M2-I": _p("m2", "avg", 500, 2e-3, 3, 20, 50),
    "M2-II": _p("m2", "avg", 1000, 1e-3, 4, 40, 60),
    "M3-I": _p("m3", "avg", 500, 2e-3, 6, 20, 50),
    "M3-II": _p("m3", "sum", 500, 2e-3, 6, 20, 50),
    "M3-III": _p("m3", "avg", 500, 2e-3, 6, 20, 50, weighted=True),
    "M3-IV": _p("m3", "sum", 500, 2e-3, 6, 20, 50, weighted=True),
    "M1-Zinc": _p("m1", "sum", 2000, 1e-3, 6, 150, 80),
    "M2-Zinc": _p("m2", "avg", 1000, 1e-3, 4, 50, 70),
    "M3-Zinc": _p("m3", "avg", 500, 2e-3, 6, 20, 50),
}

# module combinations evaluated together
CONFIGURATIONS = {
    "C1": ("M1-I", "M2-I", "M3-I"),
    "C2": ("M1-II", "M2-II", "M3-I"),
    "C3": ("M1-III", "M2-II", "M3-II"),
    "Zinc": ("M1-Zinc", "M2-Zinc", "M3-Zinc"),
}


def preset(name: str, **overrides) -> ModuleConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModuleConfig(**PRESETS[name], preset=name).with_overrides(**overrides)


# --- encoding ---------------------------------------------------------------

@dataclass
class Encoded:
    """A batch of step examples (or generation queries) as network input."""

    batch: GraphBatch
    u: np.ndarray  # readout vertex (node head) or earlier endpoint (edge head)
    v: np.ndarray | None
    labels: np.ndarray | None
    targets: np.ndarray | None
    owner: np.ndarray  # readout row -> example index


def encode(kind: ModuleKind, graphs: Sequence[MolecularGraph], focus: Sequence[int],
           readouts: Sequence[Sequence[tuple[int, int]]] | None, label_dim: int, edge_dim: int,
           aggregation: str, focus_flag: bool = False,
           targets: Sequence[Sequence[int]] | None = None) -> Encoded:
    """``readouts[e]`` lists the (u, v) edges read out of example ``e``
    (ignored for the node module, which reads the focus vertex)."""
    batch = GraphBatch.from_graphs(graphs, label_dim, edge_dim, aggregation,
                                   focus if focus_flag else None)
    starts = batch.graph_start
    if kind is ModuleKind.M1:
        u = starts + np.asarray(focus, dtype=np.intp)
        owner = np.arange(len(graphs))
        return Encoded(batch, u, None, None,
                       None if targets is None else np.asarray([t[0] for t in targets]), owner)
    us, vs, labels, owner = [], [], [], []
    for e, (g, pairs) in enumerate(zip(graphs, readouts)):
        off = starts[e]
        for a, b in pairs:
            us.append(off + a)
            vs.append(off + b)
            labels.append(g.edge_type(a, b))
            owner.append(e)
    tg = None if targets is None else np.asarray([t for ts in targets for t in ts], dtype=np.intp)
    return Encoded(batch, np.asarray(us, dtype=np.intp), np.asarray(vs, dtype=np.intp),
                   np.asarray(labels, dtype=np.intp), tg, np.asarray(owner, dtype=np.intp))


def encode_examples(kind: ModuleKind, examples: Sequence[StepExample], model: GnnModel,
                    focus_flag: bool = False) -> Encoded:
    graphs = [ex.graph for ex in examples]
    focus = [ex.focus for ex in examples]
    if kind is ModuleKind.M1:
        readouts, targets = None, [[ex.supervision] for ex in examples]
    elif kind is ModuleKind.M2:
        readouts = [[(ex.focus, ex.target_vertex)] for ex in examples]
        targets = [[ex.supervision] for ex in examples]
    else:
        readouts = [[(k, j) for k, j, _ in ex.candidate_edges] for ex in examples]
        targets = [[c for _, _, c in ex.candidate_edges] for ex in examples]
    return encode(kind, graphs, focus, readouts, model.label_dim, model.edge_dim,
                  model.aggregation, focus_flag, targets)


def forward(model: GnnModel, enc: Encoded):
    rel = gnn.relax(model, enc.batch)
    if model.head_kind == "node":
        logits, cache = gnn.node_logits(model, rel.states, enc.u)
    else:
        logits, cache = gnn.edge_logits(model, rel.states, enc.u, enc.v, enc.labels)
    return logits, rel, cache


# --- trained module ---------------------------------------------------------

@dataclass
class TrainedModule:
    kind: ModuleKind
    model: GnnModel
    mode: str
    priors: np.ndarray
    class_weighted: bool = False
    focus_flag: bool = False
    preset: str | None = None

    def adjust(self, logits: np.ndarray) -> np.ndarray:
        """Class-weighted models learn prior-balanced outputs; multiply the
        priors back in (as a log-space shift, which renormalizes)."""
        if not self.class_weighted:
            return logits
        return logits + np.log(np.maximum(self.priors, 1e-300))

    def probabilities(self, logits: np.ndarray) -> np.ndarray:
        return gnn.softmax(self.adjust(logits))

    def manifest(self) -> dict:
        return {
            "kind": self.kind.value,
            "mode": self.mode,
            "preset": self.preset,
            "priors": self.priors.tolist(),
            "class_weighted": self.class_weighted,
            "focus_flag": self.focus_flag,
        }

    def save(self, path: str | os.PathLike) -> None:
        self.model.save(path, module=self.manifest())

    @classmethod
    def load(cls, path: str | os.PathLike) -> TrainedModule:
        doc = json.loads(Path(path).read_text())
        man = doc["module"]
        return cls(ModuleKind(man["kind"]), GnnModel.from_dict(doc), man["mode"],
                   np.asarray(man["priors"]), man["class_weighted"], man["focus_flag"], man["preset"])


def new_model(config: ModuleConfig, spec: DatasetSpec, rng: np.random.Generator) -> GnnModel:
    label_dim = spec.n_vertex_types + (1 if config.focus_flag else 0)
    return GnnModel.create(
        rng,
        head_kind=config.kind.head_kind,
        aggregation=config.aggregation,
        k_max=config.k_max,
        epsilon=config.epsilon,
        state_dim=max(config.state_dim, label_dim),
        label_dim=label_dim,
        edge_dim=spec.n_edge_types + 1,
        n_classes=config.kind.n_classes(spec),
        hu_state=config.hu_state,
        hu_out=config.hu_out,
    )


def example_targets(kind: ModuleKind, examples: Sequence[StepExample]) -> list[int]:
    if kind is ModuleKind.M3:
        return [c for ex in examples for _, _, c in ex.candidate_edges]
    return [ex.supervision for ex in examples]


def class_priors(kind: ModuleKind, examples: Sequence[StepExample], spec: DatasetSpec) -> np.ndarray:
    counts = np.bincount(example_targets(kind, examples), minlength=kind.n_classes(spec)).astype(float)
    return counts / max(counts.sum(), 1.0)


def accuracy(module: TrainedModule, enc: Encoded, chunk: Sequence[Encoded] | None = None) -> float:
    """Single-step accuracy: argmax of the (prior-adjusted) output vs supervision."""
    parts = chunk if chunk is not None else [enc]
    hits = total = 0
    for part in parts:
        logits, _, _ = forward(module.model, part)
        pred = np.argmax(module.adjust(logits), axis=1)
        hits += int((pred == part.targets).sum())
        total += len(part.targets)
    return hits / max(total, 1)


def _check_kind(kind: ModuleKind, examples: Sequence[StepExample]) -> None:
    for ex in examples:
        is_m3 = bool(ex.candidate_edges)
        has_target = ex.target_vertex is not None
        ok = {
            ModuleKind.M1: not has_target and not is_m3,
            ModuleKind.M2: has_target and not is_m3 and ex.supervision is not None,
            ModuleKind.M3: has_target and is_m3,
        }[kind]
        if not ok:
            raise ValueError(f"example does not belong to module {kind.value}")


def _chunks(items: Sequence, size: int):
    for k in range(0, len(items), size):
        yield items[k:k + size]


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    majority_baseline: float | None = None


def train_module(
    kind: ModuleKind | str,
    batches: Sequence[Sequence[StepExample]],
    config: ModuleConfig,
    spec: DatasetSpec,
    valid: Sequence[StepExample] | None = None,
) -> tuple[TrainedModule, TrainingLog]:
    """Train one module on its step examples, one Adam step per batch.

    The Gumbel-softmax temperature is annealed linearly across epochs. With a
    validation set, the epoch with the best single-step accuracy is kept.
    """
    kind = ModuleKind(kind)
    if config.kind is not kind:
        raise ValueError(f"config is for {config.kind.value}, training {kind.value}")
    batches = [list(b) for b in batches if len(b)]
    all_examples = [ex for b in batches for ex in b]
    _check_kind(kind, all_examples)
    if valid is not None:
        _check_kind(kind, valid)
    rng = np.random.default_rng(config.seed)
    model = new_model(config, spec, rng)
    priors = class_priors(kind, all_examples, spec) if all_examples else \
        np.full(kind.n_classes(spec), 1.0 / kind.n_classes(spec))
    weights = np.where(priors > 0, 1.0 / np.maximum(priors, 1e-300), 0.0) if config.class_weighted else None
    module = TrainedModule(kind, model, spec.mode.value, priors, config.class_weighted,
                           config.focus_flag, config.preset)
    tlog = TrainingLog()
    if config.epochs == 0 or not batches:
        return module, tlog

    enc_batches = [encode_examples(kind, b, model, config.focus_flag) for b in batches]
    enc_valid = None
    if valid:
        enc_valid = [encode_examples(kind, c, model, config.focus_flag) for c in _chunks(valid, 4096)]
        vt = np.concatenate([e.targets for e in enc_valid])
        tlog.majority_baseline = float(np.bincount(vt).max() / len(vt))
    opt = OptimizerState(lr=config.lr)
    schedule = AnnealSchedule(config.epochs, config.tau_max, config.tau_min)
    best_acc, best_params = -1.0, None
    for epoch in range(config.epochs):
        tau = gnn.anneal_tau(epoch, schedule)
        losses = []
        for b in rng.permutation(len(enc_batches)):
            enc = enc_batches[b]
            logits, rel, cache = forward(model, enc)
            noise = gnn.gumbel_noise(logits.shape, rng) if config.gumbel_training else None
            loss, d_logits = gnn.batch_xent(logits, enc.targets, weights, noise, tau)
            grads = gnn.backward(model, enc.batch, rel, cache, d_logits)
            gnn.adam_step(model, grads, opt)
            losses.append(loss)
        row = {"epoch": epoch, "tau": tau, "loss": float(np.mean(losses))}
        if enc_valid is not None:
            acc = accuracy(module, enc_valid[0], enc_valid)
            row["valid_accuracy"] = acc
            if acc > best_acc:
                best_acc, tlog.best_epoch = acc, epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
        tlog.epochs.append(row)
        log.info("%s epoch %d tau %.3f loss %.4f acc %s", kind.value, epoch, tau, row["loss"],
                 row.get("valid_accuracy"))
    if best_params is not None:
        model.params = best_params
    return module, tlog


# --- single decisions -------------------------------------------------------

def _decide_rows(module: TrainedModule, logits: np.ndarray, tau: float, rng: np.random.Generator):
    hard, _ = gnn.gumbel_sample(module.adjust(logits), tau, rng)
    return np.atleast_1d(hard)


def m1_decide(g: MolecularGraph, focus: int, module: TrainedModule, tau: float,
              rng: np.random.Generator) -> int:
    """0 = stop, 1 + t = add a neighbor of vertex type t."""
    if not 0 <= focus < g.n_vertices:
        raise IndexError("focus vertex out of range")
    m = module.model
    enc = encode(ModuleKind.M1, [g], [focus], None, m.label_dim, m.edge_dim, m.aggregation,
                 module.focus_flag)
    logits, _, _ = forward(m, enc)
    return int(_decide_rows(module, logits, tau, rng)[0])


def m2_decide(g: MolecularGraph, i: int, j: int, module: TrainedModule, tau: float,
              rng: np.random.Generator) -> int:
    """Edge type of the (i, j) edge, which must carry the candidate label."""
    m = module.model
    if g.edge_type(i, j) != m.edge_dim - 1:
        raise ValueError(f"no candidate edge ({i}, {j})")
    enc = encode(ModuleKind.M2, [g], [i], [[(i, j)]], m.label_dim, m.edge_dim, m.aggregation,
                 module.focus_flag)
    logits, _, _ = forward(m, enc)
    return int(_decide_rows(module, logits, tau, rng)[0])


def provisional_graph(g: MolecularGraph, i: int, j: int, candidate: int) -> tuple[MolecularGraph, list[int]]:
    others = [k for k in range(j) if k != i]
    return MolecularGraph.from_valid(g.vertex_types, g.edges + tuple((k, j, candidate) for k in others)), others


def m3_decide(g: MolecularGraph, i: int, j: int, module: TrainedModule, tau: float,
              rng: np.random.Generator) -> dict[int, int]:
    """Links from new vertex ``j`` to earlier vertices other than ``i``.

    All provisional edges are classified from one relaxation of the extended
    graph; returns {k: edge type} for the edges not classified disconnected.
    """
    if set(g.adjacency[j]) != {i} or any(k > j for k in g.adjacency[i]):
        raise ValueError(f"vertex {j} must be the newest vertex, linked only to {i}")
    m = module.model
    g2, others = provisional_graph(g, i, j, m.edge_dim - 1)
    if not others:
        return {}
    enc = encode(ModuleKind.M3, [g2], [i], [[(k, j) for k in others]], m.label_dim, m.edge_dim,
                 m.aggregation, module.focus_flag)
    logits, _, _ = forward(m, enc)
    classes = _decide_rows(module, logits, tau, rng)
    return {k: int(c) - 1 for k, c in zip(others, classes) if c != 0}


def config_dict(config: ModuleConfig) -> dict:
    d = asdict(config)
    d["kind"] = config.kind.value
    return d
