"""Per-step training examples for the three decision modules.

A molecule renumbered in breadth-first order is replayed through the
generation loop: every decision the loop would have to make becomes one
supervised example, taken on the partial graph that exists at that moment.

Class conventions:
    node module   0 = stop, 1 + t = new vertex of type t
    first edge    t = edge type t
    extra links   0 = disconnected, 1 + t = edge of type t
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import MolecularGraph, TypePriority, betweenness, bfs_order

STOP = 0
DISCONNECTED = 0


@dataclass(frozen=True)
class StepExample:
    graph: MolecularGraph
    focus: int
    supervision: int | None = None
    target_vertex: int | None = None
    candidate_edges: tuple[tuple[int, int, int], ...] = ()  # (k, j, class)


@dataclass
class MoleculeSteps:
    m1: list[StepExample]
    m2: list[StepExample]
    m3: list[StepExample]


@dataclass
class TrainingSet:
    molecules: list[MoleculeSteps]
    batches: list[list[int]] = field(default_factory=list)  # molecule indices

    def examples(self, kind: str, molecules: Sequence[int] | None = None) -> list[StepExample]:
        idx = range(len(self.molecules)) if molecules is None else molecules
        return [ex for i in idx for ex in getattr(self.molecules[i], kind)]


def type_priority_from_centrality(train: Sequence[MolecularGraph], n_types: int) -> TypePriority:
    """Mean betweenness per vertex type; lower mean is expanded first.

    Types that never occur get centrality 0.
    """
    if not train:
        raise ValueError("empty training set")
    total = np.zeros(n_types)
    count = np.zeros(n_types)
    for g in train:
        scores = betweenness(g)
        types = np.asarray(g.vertex_types)
        np.add.at(total, types, scores)
        np.add.at(count, types, 1)
    means = np.divide(total, count, out=np.zeros(n_types), where=count > 0)
    return TypePriority.from_scores(means.tolist())


def reorder(g: MolecularGraph, prio: TypePriority, rng: np.random.Generator) -> MolecularGraph:
    return g.relabel(bfs_order(g, 0, prio, rng))


def parents(g: MolecularGraph) -> list[int]:
    """BFS parent of every vertex (-1 for vertex 0).

    Raises ValueError if the numbering is not a breadth-first order rooted at
    vertex 0, i.e. if some vertex has no earlier neighbor or the children of
    earlier vertices are not numbered first.
    """
    par = [-1]
    for j in range(1, g.n_vertices):
        earlier = [k for k in g.adjacency[j] if k < j]
        if not earlier:
            raise ValueError(f"vertex {j} has no earlier neighbor: not a BFS order from 0")
        p = earlier[0]
        if p < par[-1]:
            raise ValueError(f"vertex {j} breaks breadth-first numbering")
        par.append(p)
    return par


def decompose(g: MolecularGraph, candidate_label: int) -> MoleculeSteps:
    """Replay the construction of ``g`` and record every decision.

    ``candidate_label`` is the reserved input label of undecided edges.
    """
    n = g.n_vertices
    par = parents(g)
    children: list[list[int]] = [[] for _ in range(n)]
    for j in range(1, n):
        children[par[j]].append(j)

    m1, m2, m3 = [], [], []
    created = 1
    for i in range(n):
        for j in children[i]:
            m1.append(StepExample(g.induced_prefix(j), i, 1 + g.vertex_types[j]))
            base = g.induced_prefix(j)
            types = base.vertex_types + (g.vertex_types[j],)
            true_first = g.edge_type(i, j)
            m2.append(StepExample(
                MolecularGraph(types, base.edges + ((i, j, candidate_label),)),
                i, true_first, target_vertex=j,
            ))
            others = [k for k in range(j) if k != i]
            if others:
                provisional = tuple((k, j, candidate_label) for k in others)
                labels = tuple(
                    (k, j, DISCONNECTED if g.edge_type(k, j) is None else 1 + g.edge_type(k, j))
                    for k in others
                )
                m3.append(StepExample(
                    MolecularGraph(types, base.edges + ((i, j, true_first),) + provisional),
                    i, None, target_vertex=j, candidate_edges=labels,
                ))
            created = j + 1
        m1.append(StepExample(g.induced_prefix(created), i, STOP))
    return MoleculeSteps(m1, m2, m3)


def build_training_set(graphs: Sequence[MolecularGraph], candidate_label: int) -> TrainingSet:
    return TrainingSet([decompose(g, candidate_label) for g in graphs])


def make_batches(ts: TrainingSet, batch_count: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle molecules and deal them into ``batch_count`` groups.

    Batches hold molecule indices, so all steps of a molecule stay together.
    The assignment is also stored on ``ts``.
    """
    n = len(ts.molecules)
    if not 1 <= batch_count <= n:
        raise ValueError(f"batch_count must be in 1..{n}")
    perm = rng.permutation(n)
    ts.batches = [sorted(part.tolist()) for part in np.array_split(perm, batch_count)]
    return ts.batches
