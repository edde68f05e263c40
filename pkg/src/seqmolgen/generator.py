"""Sequential construction of molecules from the three decision modules.

One generation is written as a coroutine that yields a ``Query`` whenever a
module has to decide and receives the decision back. This keeps the loop
itself independent of how decisions are made: a policy can answer one query
at a time, replay recorded decisions, or answer thousands of queries from
concurrent generations with one batched forward pass per module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Generator, Protocol, Sequence

import numpy as np

from . import gnn
from .graph import MolecularGraph
from .ingest import DatasetSpec, write_graph_cache, write_jsonl
from .modules import ModuleKind, TrainedModule, encode, forward, provisional_graph
from .sequencer import STOP, MoleculeSteps

TRACE_FORMAT = "seqmolgen-traces"
TRACE_VERSION = 1


@dataclass(frozen=True)
class SeedDistribution:
    """Categorical distribution of the first vertex type."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("seed probabilities must be a nonnegative vector summing to 1")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        out = rng.choice(len(self.probs), size=size, p=np.asarray(self.probs))
        return int(out) if size is None else out

    @classmethod
    def point(cls, vertex_type: int, n_types: int) -> SeedDistribution:
        p = [0.0] * n_types
        p[vertex_type] = 1.0
        return cls(tuple(p))


def estimate_d0(train: Sequence[MolecularGraph], n_types: int) -> SeedDistribution:
    """Empirical frequency of the type of vertex 0 (graphs already reordered)."""
    if not train:
        raise ValueError("empty training set")
    counts = np.bincount([g.vertex_types[0] for g in train], minlength=n_types)
    return SeedDistribution(tuple((counts / counts.sum()).tolist()))


@dataclass(frozen=True)
class Query:
    kind: ModuleKind
    graph: MolecularGraph
    focus: int
    target: int | None = None


@dataclass
class GenerationOutcome:
    graph: MolecularGraph
    complete: bool
    trace: list[dict] = field(default_factory=list)


def construction(seed_type: int, vmax: int, candidate: int) -> Generator[Query, object, GenerationOutcome]:
    """The generation loop for one molecule.

    Vertex ``i`` is expanded by asking the node module for neighbors until it
    says stop. Each new vertex ``j`` is linked to ``i`` (edge type from the
    first-edge module) and then to earlier vertices (extra-link module). The
    graph never exceeds ``vmax`` vertices: a request for a new vertex at the
    cap ends generation with ``complete=False``.
    """
    if vmax < 1:
        raise ValueError("vmax must be >= 1")
    types = [seed_type]
    edges: list[tuple[int, int, int]] = []
    trace: list[dict] = []
    i = 0
    while i < len(types):
        while True:
            g = MolecularGraph.from_valid(tuple(types), tuple(edges))
            c = yield Query(ModuleKind.M1, g, i)
            trace.append({"module": "m1", "n_vertices": len(types), "focus": i, "decision": int(c)})
            if c == STOP:
                break
            if len(types) >= vmax:
                return GenerationOutcome(g, False, trace)
            j = len(types)
            types.append(c - 1)
            g = MolecularGraph.from_valid(tuple(types), tuple(edges) + ((i, j, candidate),))
            t = yield Query(ModuleKind.M2, g, i, j)
            trace.append({"module": "m2", "n_vertices": len(types), "focus": i, "target": j,
                          "decision": int(t)})
            edges.append((i, j, int(t)))
            if j > 1:
                g = MolecularGraph.from_valid(tuple(types), tuple(edges))
                links = yield Query(ModuleKind.M3, g, i, j)
                trace.append({"module": "m3", "n_vertices": len(types), "focus": i, "target": j,
                              "decision": sorted([int(k), int(t)] for k, t in links.items())})
                edges.extend((k, j, int(t)) for k, t in sorted(links.items()))
        i += 1
    return GenerationOutcome(MolecularGraph.from_valid(tuple(types), tuple(edges)), True, trace)


class Policy(Protocol):
    def decide(self, queries: Sequence[Query], rngs: Sequence[np.random.Generator], tau: float) -> list:
        """One decision per query: an int for m1/m2, {k: edge type} for m3."""


class ModulePolicy:
    """Answers queries with trained modules, one forward pass per module kind."""

    def __init__(self, m1: TrainedModule, m2: TrainedModule, m3: TrainedModule):
        for m, kind in ((m1, ModuleKind.M1), (m2, ModuleKind.M2), (m3, ModuleKind.M3)):
            if m.kind is not kind:
                raise ValueError(f"expected a {kind.value} module, got {m.kind.value}")
        if len({m1.mode, m2.mode, m3.mode}) != 1:
            raise ValueError("modules were trained for different datasets")
        self.modules = {ModuleKind.M1: m1, ModuleKind.M2: m2, ModuleKind.M3: m3}

    @property
    def candidate(self) -> int:
        return self.modules[ModuleKind.M2].model.edge_dim - 1

    def decide(self, queries, rngs, tau):
        out: list = [None] * len(queries)
        for kind, module in self.modules.items():
            idx = [q for q, query in enumerate(queries) if query.kind is kind]
            if idx:
                for q, d in zip(idx, self._decide_kind(kind, module, [queries[q] for q in idx],
                                                       [rngs[q] for q in idx], tau)):
                    out[q] = d
        return out

    def _decide_kind(self, kind, module, queries, rngs, tau):
        m = module.model
        focus = [q.focus for q in queries]
        if kind is ModuleKind.M1:
            graphs, readouts = [q.graph for q in queries], None
        elif kind is ModuleKind.M2:
            graphs = [q.graph for q in queries]
            readouts = [[(q.focus, q.target)] for q in queries]
        else:
            graphs, readouts, others = [], [], []
            for q in queries:
                g2, ks = provisional_graph(q.graph, q.focus, q.target, self.candidate)
                graphs.append(g2)
                readouts.append([(k, q.target) for k in ks])
                others.append(ks)
        enc = encode(kind, graphs, focus, readouts, m.label_dim, m.edge_dim, m.aggregation,
                     module.focus_flag)
        logits, _, _ = forward(m, enc)
        logits = module.adjust(logits)
        if tau <= 0:
            raise ValueError("tau must be positive")
        # one noise draw per query from its own stream (the same draws
        # gnn.gumbel_sample would make), then a single argmax for the batch
        if kind is not ModuleKind.M3:
            noise = np.stack([gnn.gumbel_noise(logits.shape[1], rng) for rng in rngs])
            return [int(c) for c in np.argmax((logits + noise) / tau, axis=1)]
        bounds = np.searchsorted(enc.owner, np.arange(len(queries) + 1))
        noise = [gnn.gumbel_noise((bounds[e + 1] - bounds[e], logits.shape[1]), rng)
                 for e, rng in enumerate(rngs)]
        classes = np.argmax((logits + np.concatenate(noise)) / tau, axis=1) if len(logits) else []
        return [{k: int(c) - 1 for k, c in zip(others[e], classes[bounds[e]:bounds[e + 1]]) if c != 0}
                for e in range(len(queries))]


class ReplayPolicy:
    """Replays the decisions recorded by the sequencer for one molecule.

    Every query must show exactly the partial graph the recorded example was
    taken on; any divergence raises ``AssertionError``.
    """

    def __init__(self, steps: MoleculeSteps, candidate: int):
        self.queues = {ModuleKind.M1: list(steps.m1), ModuleKind.M2: list(steps.m2),
                       ModuleKind.M3: list(steps.m3)}
        self.candidate = candidate

    def decide(self, queries, rngs, tau):
        return [self._one(q) for q in queries]

    def _one(self, q: Query):
        queue = self.queues[q.kind]
        if q.kind is ModuleKind.M3:
            g2, ks = provisional_graph(q.graph, q.focus, q.target, self.candidate)
            if not queue or queue[0].graph != g2:
                raise AssertionError("replay diverged at the extra-link step")
            ex = queue.pop(0)
            return {k: c - 1 for k, _, c in ex.candidate_edges if c != 0}
        if not queue or queue[0].graph != q.graph or queue[0].focus != q.focus:
            raise AssertionError(f"replay diverged at a {q.kind.value} step")
        return queue.pop(0).supervision

    def exhausted(self) -> bool:
        return not any(self.queues.values())


def _as_policy(models) -> Policy:
    if hasattr(models, "decide"):
        return models
    return ModulePolicy(*models)


def run_lockstep(policy: Policy, seed_types: Sequence[int], rngs: Sequence[np.random.Generator],
                 vmax: int, tau: float, candidate: int) -> list[GenerationOutcome]:
    """Advance many generations together, batching their pending queries."""
    coros = [construction(t, vmax, candidate) for t in seed_types]
    outcomes: list[GenerationOutcome | None] = [None] * len(coros)
    live = {k: next(co) for k, co in enumerate(coros)}
    while live:
        ids = list(live)
        decisions = policy.decide([live[k] for k in ids], [rngs[k] for k in ids], tau)
        for k, d in zip(ids, decisions):
            try:
                live[k] = coros[k].send(d)
            except StopIteration as stop:
                outcomes[k] = stop.value
                del live[k]
    return outcomes


def _candidate(policy) -> int:
    c = getattr(policy, "candidate", None)
    if c is None:
        raise ValueError("policy does not expose its candidate edge label")
    return c


def generate(models, d0: SeedDistribution, vmax: int, tau: float,
             rng: np.random.Generator) -> GenerationOutcome:
    """One molecule. ``models`` is an (m1, m2, m3) tuple or a policy."""
    policy = _as_policy(models)
    return run_lockstep(policy, [d0.sample(rng)], [rng], vmax, tau, _candidate(policy))[0]


def generate_batch(n: int, models, d0: SeedDistribution, vmax: int, tau: float,
                   rng: np.random.Generator, chunk: int = 1000) -> list[GenerationOutcome]:
    """``n`` independent generations, each with its own child rng stream.

    Results depend only on ``rng``'s state, not on ``chunk``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    policy = _as_policy(models)
    cand = _candidate(policy)
    streams = rng.spawn(n)
    seeds = [d0.sample(r) for r in streams]
    out: list[GenerationOutcome] = []
    for a in range(0, n, chunk):
        out.extend(run_lockstep(policy, seeds[a:a + chunk], streams[a:a + chunk], vmax, tau, cand))
    return out


def write_generated(path, outcomes: Sequence[GenerationOutcome], spec: DatasetSpec,
                    trace_path=None, **header_fields) -> None:
    write_graph_cache(path, [o.graph for o in outcomes], spec,
                      extra=[{"complete": o.complete} for o in outcomes], **header_fields)
    if trace_path is not None:
        header = {"format": TRACE_FORMAT, "version": TRACE_VERSION, **header_fields}
        write_jsonl(trace_path, header, ({"index": k, "trace": o.trace} for k, o in enumerate(outcomes)))
