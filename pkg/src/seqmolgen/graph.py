"""Undirected labeled graphs and the graph algorithms built on them.

Vertex and edge labels are stored as integer type indices; the one-hot
encodings used by the networks are derived on demand. Edges are stored once
as ``(u, v, type)`` with ``u < v`` and exposed symmetrically.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import kernels


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class MolecularGraph:
    vertex_types: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        types = tuple(int(t) for t in self.vertex_types)
        n = len(types)
        if any(t < 0 for t in types):
            raise GraphError("negative vertex type")
        norm = []
        seen = set()
        for u, v, t in self.edges:
            u, v, t = int(u), int(v), int(t)
            if u == v:
                raise GraphError(f"self-loop on vertex {u}")
            if u > v:
                u, v = v, u
            if u < 0 or v >= n:
                raise GraphError(f"edge ({u}, {v}) outside 0..{n - 1}")
            if t < 0:
                raise GraphError("negative edge type")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
            norm.append((u, v, t))
        norm.sort()
        object.__setattr__(self, "vertex_types", types)
        object.__setattr__(self, "edges", tuple(norm))

    @classmethod
    def from_valid(cls, vertex_types: tuple[int, ...], edges) -> MolecularGraph:
        """Skip validation for parts already known to be valid (int labels,
        u < v, no duplicates); edges are still sorted."""
        g = object.__new__(cls)
        object.__setattr__(g, "vertex_types", tuple(vertex_types))
        object.__setattr__(g, "edges", tuple(sorted(edges)))
        return g

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_types)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in self.vertex_types]
        for u, v, _ in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def edge_map(self) -> dict[tuple[int, int], int]:
        return {(u, v): t for u, v, t in self.edges}

    def edge_type(self, u: int, v: int) -> int | None:
        if u > v:
            u, v = v, u
        k = bisect_left(self.edges, (u, v, -1))
        if k < len(self.edges) and self.edges[k][0] == u and self.edges[k][1] == v:
            return self.edges[k][2]
        return None

    def neighbors(self, v: int) -> tuple[int, ...]:
        if not 0 <= v < self.n_vertices:
            raise IndexError(f"vertex {v} out of range for |V|={self.n_vertices}")
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def is_connected(self) -> bool:
        n = self.n_vertices
        if n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for w in self.adjacency[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == n

    def relabel(self, order: Sequence[int]) -> MolecularGraph:
        """Renumber so that old vertex ``order[k]`` becomes vertex ``k``."""
        if sorted(order) != list(range(self.n_vertices)):
            raise GraphError("relabel order is not a permutation")
        new_index = {old: new for new, old in enumerate(order)}
        return MolecularGraph(
            tuple(self.vertex_types[old] for old in order),
            tuple((new_index[u], new_index[v], t) for u, v, t in self.edges),
        )

    def induced_prefix(self, k: int) -> MolecularGraph:
        """Subgraph induced by vertices ``0..k-1``."""
        return MolecularGraph(
            self.vertex_types[:k], tuple(e for e in self.edges if e[1] < k)
        )

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        indptr = np.zeros(self.n_vertices + 1, dtype=np.intp)
        indptr[1:] = np.cumsum([len(a) for a in self.adjacency])
        indices = np.fromiter(
            (w for a in self.adjacency for w in a), dtype=np.intp, count=int(indptr[-1])
        )
        return indptr, indices

    def onehot_vertices(self, n_types: int) -> np.ndarray:
        out = np.zeros((self.n_vertices, n_types))
        out[np.arange(self.n_vertices), self.vertex_types] = 1.0
        return out


def neighbors(g: MolecularGraph, v: int) -> tuple[int, ...]:
    return g.neighbors(v)


def betweenness(g: MolecularGraph) -> np.ndarray:
    """Normalized Freeman betweenness per vertex, in [0, 1].

    Pairs are counted once (undirected) and divided by (n-1)(n-2)/2. Graphs
    with fewer than three vertices score zero everywhere.
    """
    indptr, indices = g.csr()
    return kernels.betweenness_csr(indptr, indices)


@dataclass(frozen=True)
class TypePriority:
    """Expansion rank per vertex type; lower rank is expanded first."""

    ranks: tuple[int, ...]
    centrality: tuple[float, ...] = ()

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> TypePriority:
        order = sorted(range(len(scores)), key=lambda t: (scores[t], t))
        ranks = [0] * len(scores)
        for r, t in enumerate(order):
            ranks[t] = r
        return cls(tuple(ranks), tuple(float(s) for s in scores))

    @classmethod
    def identity(cls, n_types: int) -> TypePriority:
        return cls(tuple(range(n_types)))

    def rank(self, vertex_type: int) -> int:
        return self.ranks[vertex_type]


def bfs_order(
    g: MolecularGraph, start: int, prio: TypePriority, rng: np.random.Generator
) -> list[int]:
    """Breadth-first vertex order from ``start``.

    The unvisited neighbors of each expanded vertex are appended by ascending
    type rank; vertices of equal rank are shuffled with ``rng``.
    """
    n = g.n_vertices
    if not 0 <= start < n:
        raise IndexError(f"start vertex {start} out of range")
    order = [start]
    visited = [False] * n
    visited[start] = True
    queue = deque([start])
    while queue:
        v = queue.popleft()
        fresh = [w for w in g.adjacency[v] if not visited[w]]
        if len(fresh) > 1:
            fresh = [fresh[k] for k in rng.permutation(len(fresh))]
            fresh.sort(key=lambda w: prio.rank(g.vertex_types[w]))  # stable
        for w in fresh:
            visited[w] = True
            order.append(w)
            queue.append(w)
    if len(order) != n:
        raise GraphError("graph is disconnected")
    return order


# --- isomorphism -----------------------------------------------------------

def _digest(*parts) -> bytes:
    return hashlib.blake2b(repr(parts).encode(), digest_size=12).digest()


def refine_colors(g: MolecularGraph) -> list[bytes]:
    """Iterated neighborhood-label refinement (1-WL with edge labels).

    Colors are content hashes, so they are comparable across graphs.
    """
    colors = [_digest("v", t) for t in g.vertex_types]
    n_classes = len(set(colors))
    for _ in range(g.n_vertices):
        new = []
        for v in range(g.n_vertices):
            sig = sorted((g.edge_type(v, w), colors[w]) for w in g.adjacency[v])
            new.append(_digest(colors[v], sig))
        colors = new
        k = len(set(colors))
        if k == n_classes:
            break
        n_classes = k
    return colors


def canonical_key(g: MolecularGraph) -> bytes:
    """Isomorphism-invariant key. Equal for isomorphic graphs; collisions are
    possible for non-isomorphic ones and must be settled by ``is_isomorphic``.
    """
    colors = refine_colors(g)
    edge_colors = sorted(
        tuple(sorted((colors[u], colors[v]))) + (t,) for u, v, t in g.edges
    )
    return _digest(g.n_vertices, g.n_edges, sorted(colors), edge_colors)


def _invariants(g: MolecularGraph):
    return (
        g.n_vertices,
        g.n_edges,
        sorted(g.vertex_types),
        sorted(t for _, _, t in g.edges),
        sorted((g.vertex_types[v], len(g.adjacency[v])) for v in range(g.n_vertices)),
    )


def is_isomorphic(
    g1: MolecularGraph,
    g2: MolecularGraph,
    colors1: Sequence[bytes] | None = None,
    colors2: Sequence[bytes] | None = None,
) -> bool:
    """Exact labeled-graph isomorphism: invariant prefilter plus backtracking."""
    if _invariants(g1) != _invariants(g2):
        return False
    c1 = list(colors1) if colors1 is not None else refine_colors(g1)
    c2 = list(colors2) if colors2 is not None else refine_colors(g2)
    if sorted(c1) != sorted(c2):
        return False
    n = g1.n_vertices
    if n == 0:
        return True

    by_color: dict[bytes, list[int]] = {}
    for v, c in enumerate(c2):
        by_color.setdefault(c, []).append(v)

    # match rare colors first, then grow along edges so checks bite early
    count = {c: len(vs) for c, vs in by_color.items()}
    order: list[int] = []
    placed = [False] * n
    while len(order) < n:
        seed = min((v for v in range(n) if not placed[v]), key=lambda v: (count[c1[v]], v))
        queue = deque([seed])
        placed[seed] = True
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in sorted(g1.adjacency[v], key=lambda w: (count[c1[w]], w)):
                if not placed[w]:
                    placed[w] = True
                    queue.append(w)

    mapping = [-1] * n
    used = [False] * n
    em1, em2 = g1.edge_map, g2.edge_map

    def consistent(v: int, w: int) -> bool:
        for x in g1.adjacency[v]:
            y = mapping[x]
            if y >= 0:
                a, b = (w, y) if w < y else (y, w)
                if em2.get((a, b)) != em1[(v, x) if v < x else (x, v)]:
                    return False
        # mapped neighbors of w must come from mapped neighbors of v
        mapped_nbrs = sum(1 for x in g1.adjacency[v] if mapping[x] >= 0)
        return mapped_nbrs == sum(1 for y in g2.adjacency[w] if used[y])

    # iterative depth-first search; cursor[d] is the next candidate slot at depth d
    cursor = [0] * n
    depth = 0
    while depth >= 0:
        if depth == n:
            return True
        v = order[depth]
        cands = by_color[c1[v]]
        if mapping[v] >= 0:  # returning to this depth: undo the previous choice
            used[mapping[v]] = False
            mapping[v] = -1
        while cursor[depth] < len(cands):
            w = cands[cursor[depth]]
            cursor[depth] += 1
            if not used[w] and consistent(v, w):
                mapping[v] = w
                used[w] = True
                break
        if mapping[v] >= 0:
            depth += 1
            if depth < n:
                cursor[depth] = 0
        else:
            depth -= 1
    return False


def connected_components(g: MolecularGraph) -> list[list[int]]:
    seen = [False] * g.n_vertices
    comps = []
    for s in range(g.n_vertices):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        stack = [s]
        while stack:
            for w in g.adjacency[stack.pop()]:
                if not seen[w]:
                    seen[w] = True
                    comp.append(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def disjoint_union(graphs: Iterable[MolecularGraph]) -> MolecularGraph:
    types: list[int] = []
    edges = []
    for g in graphs:
        off = len(types)
        types.extend(g.vertex_types)
        edges.extend((u + off, v + off, t) for u, v, t in g.edges)
    return MolecularGraph(tuple(types), tuple(edges))
