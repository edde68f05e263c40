"""Valence-rule validity and molecular weight."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .graph import MolecularGraph
from .ingest import DatasetSpec


@dataclass(frozen=True)
class ElementInfo:
    symbol: str
    weight: float
    valences: tuple[int, ...]

    @property
    def max_valence(self) -> int:
        return max(self.valences)


# standard atomic weights (conventional values)
ELEMENTS = {
    e.symbol: e
    for e in (
        ElementInfo("H", 1.008, (1,)),
        ElementInfo("C", 12.011, (4,)),
        ElementInfo("N", 14.007, (3,)),
        ElementInfo("O", 15.999, (2,)),
        ElementInfo("F", 18.998, (1,)),
        ElementInfo("P", 30.974, (3, 5)),
        ElementInfo("S", 32.06, (2, 4, 6)),
        ElementInfo("Cl", 35.45, (1,)),
        ElementInfo("Br", 79.904, (1,)),
        ElementInfo("I", 126.904, (1,)),
    )
}
HYDROGEN_WEIGHT = ELEMENTS["H"].weight

_ORDERS = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}


def element_table(spec: DatasetSpec) -> list[ElementInfo]:
    return [ELEMENTS[s] for s in spec.vertex_symbols]


def bond_order_sums(g: MolecularGraph, spec: DatasetSpec) -> list[float]:
    sums = [0.0] * g.n_vertices
    for u, v, t in g.edges:
        o = _ORDERS[spec.edge_names[t]]
        sums[u] += o
        sums[v] += o
    return sums


def _aromatic_off_cycle(g: MolecularGraph, aromatic: int) -> list[tuple[int, int]]:
    """Aromatic edges that are bridges of the aromatic-edge subgraph."""
    aro = [(u, v) for u, v, t in g.edges if t == aromatic]
    adj: dict[int, set[int]] = {}
    for u, v in aro:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    bad = []
    for u, v in aro:
        seen = {u}
        stack = [u]
        found = False
        while stack and not found:
            x = stack.pop()
            for y in adj[x]:
                if (x, y) in ((u, v), (v, u)) or y in seen:
                    continue
                if y == v:
                    found = True
                    break
                seen.add(y)
                stack.append(y)
        if not found:
            bad.append((u, v))
    return bad


def check_valence(g: MolecularGraph, spec: DatasetSpec) -> tuple[bool, list[tuple[int, str]]]:
    """Valence check against the element table.

    With explicit hydrogens every atom's bond-order sum must equal one of its
    allowed valences. Without them (implicit hydrogens) the sum, counting
    aromatic bonds as 1.5, may round down by at most 0.5 to an integer not
    above the largest allowed valence, and every aromatic bond must lie on a
    ring of aromatic bonds.
    """
    elements = element_table(spec)
    violations: list[tuple[int, str]] = []
    if any(t >= spec.n_edge_types for _, _, t in g.edges):
        bad = sorted({u for u, _, t in g.edges if t >= spec.n_edge_types})
        return False, [(u, "undecided edge") for u in bad]
    sums = bond_order_sums(g, spec)
    for v, (t, s) in enumerate(zip(g.vertex_types, sums)):
        el = elements[t]
        if spec.explicit_hydrogens:
            if s not in el.valences:
                violations.append((v, f"{el.symbol} bond order sum {s:g} not in {el.valences}"))
        elif s > el.max_valence + 0.5:
            violations.append((v, f"{el.symbol} bond order sum {s:g} exceeds {el.max_valence}"))
    if spec.aromatic is not None:
        for u, v in _aromatic_off_cycle(g, spec.aromatic):
            violations.append((u, f"aromatic bond ({u}, {v}) not on an aromatic ring"))
    return not violations, violations


def implicit_hydrogens(g: MolecularGraph, spec: DatasetSpec) -> list[int]:
    """Hydrogens needed to bring each atom to its smallest feasible valence."""
    if spec.explicit_hydrogens:
        return [0] * g.n_vertices
    elements = element_table(spec)
    out = []
    for t, s in zip(g.vertex_types, bond_order_sums(g, spec)):
        used = math.floor(s)  # an aromatic half-order rounds down
        fits = [v for v in elements[t].valences if v >= used]
        out.append(fits[0] - used if fits else 0)
    return out


def molecular_weight(g: MolecularGraph, spec: DatasetSpec) -> float:
    elements = element_table(spec)
    heavy = sum(elements[t].weight for t in g.vertex_types)
    return heavy + HYDROGEN_WEIGHT * sum(implicit_hydrogens(g, spec))
