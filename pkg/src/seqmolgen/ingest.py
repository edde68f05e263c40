"""Dataset ingestion: SDF (V2000) and SMILES parsing, splits, graph caches."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import GraphError, MolecularGraph

CACHE_FORMAT = "seqmolgen-graphs"
CACHE_VERSION = 1


class Mode(str, Enum):
    QM9 = "QM9"
    ZINC = "ZINC"


@dataclass(frozen=True)
class DatasetSpec:
    mode: Mode
    vertex_symbols: tuple[str, ...]
    edge_names: tuple[str, ...]
    max_vertices: int
    explicit_hydrogens: bool

    @property
    def n_vertex_types(self) -> int:
        return len(self.vertex_symbols)

    @property
    def n_edge_types(self) -> int:
        return len(self.edge_names)

    @property
    def candidate_edge(self) -> int:
        """Reserved input edge label for undecided (provisional) edges."""
        return len(self.edge_names)

    @property
    def aromatic(self) -> int | None:
        return self.edge_names.index("aromatic") if "aromatic" in self.edge_names else None

    def vertex_index(self, symbol: str) -> int:
        return self.vertex_symbols.index(symbol)

    @classmethod
    def for_mode(cls, mode: Mode | str) -> DatasetSpec:
        return {Mode.QM9: QM9, Mode.ZINC: ZINC}[Mode(mode)]


QM9 = DatasetSpec(Mode.QM9, ("H", "C", "N", "O", "F"), ("single", "double", "triple"), 29, True)
ZINC = DatasetSpec(
    Mode.ZINC,
    ("C", "O", "N", "F", "P", "S", "Cl", "I", "Br"),
    ("single", "double", "triple", "aromatic"),
    38,
    False,
)


@dataclass(frozen=True)
class SplitSpec:
    train: int
    test: int
    valid: int
    seed: int = 0

    @classmethod
    def qm9(cls, seed: int = 0) -> SplitSpec:
        return cls(120_000, 10_000, 3_885, seed)

    @classmethod
    def zinc(cls, seed: int = 0) -> SplitSpec:
        return cls(230_000, 10_000, 9_455, seed)


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RejectedMolecule(ValueError):
    """Well-formed input describing a molecule outside the modeled type space."""


@dataclass
class Diagnostic:
    record: int
    line: int | None
    reason: str


@dataclass
class SdfResult:
    graphs: list[MolecularGraph] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    raw_count: int = 0

    @property
    def accepted_count(self) -> int:
        return len(self.graphs)


def validate_graph(g: MolecularGraph, spec: DatasetSpec, allow_candidate: bool = False) -> None:
    top = spec.n_edge_types + (1 if allow_candidate else 0)
    if any(t >= spec.n_vertex_types for t in g.vertex_types):
        raise GraphError("vertex type outside type table")
    if any(t >= top for _, _, t in g.edges):
        raise GraphError("edge type outside type table")


# --- SDF ------------------------------------------------------------------

_SDF_BONDS = {1: "single", 2: "double", 3: "triple", 4: "aromatic"}


def parse_sdf(text: str | bytes, spec: DatasetSpec) -> SdfResult:
    """Parse V2000 records; bad records become diagnostics instead of raising."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = text.splitlines()
    result = SdfResult()
    start = 0
    record = 0
    for k, line in enumerate(lines + ["$$$$"]):
        if line.strip() != "$$$$":
            continue
        block = lines[start:k]
        if any(s.strip() for s in block):
            result.raw_count += 1
            try:
                result.graphs.append(_parse_record(block, start, spec))
            except ParseError as exc:
                result.diagnostics.append(Diagnostic(record, exc.line, str(exc)))
            except (RejectedMolecule, GraphError) as exc:
                result.diagnostics.append(Diagnostic(record, start + 1, str(exc)))
            record += 1
        start = k + 1
    return result


def read_sdf(path: str | os.PathLike, spec: DatasetSpec) -> SdfResult:
    return parse_sdf(Path(path).read_bytes(), spec)


def _int_field(line: str, a: int, b: int, lineno: int, what: str) -> int:
    try:
        return int(line[a:b])
    except ValueError:
        raise ParseError(f"malformed {what}: {line!r}", lineno) from None


def _parse_record(block: list[str], offset: int, spec: DatasetSpec) -> MolecularGraph:
    if len(block) < 4:
        raise ParseError("record shorter than header plus counts line", offset + len(block))
    counts = block[3]
    lineno = offset + 4
    n_atoms = _int_field(counts, 0, 3, lineno, "counts line")
    n_bonds = _int_field(counts, 3, 6, lineno, "counts line")
    if "V3000" in counts:
        raise RejectedMolecule("V3000 records are not supported")
    if len(block) < 4 + n_atoms + n_bonds:
        raise ParseError("record truncated before end of connection table", offset + len(block))

    symbols = []
    for k in range(n_atoms):
        line = block[4 + k]
        parts = line.split()
        if len(parts) < 4:
            raise ParseError(f"malformed atom line: {line!r}", offset + 5 + k)
        symbols.append(parts[3])
        if len(parts) > 5 and parts[5] not in ("0",):
            # ccc field: 4 is a doublet radical, everything else a charge
            raise RejectedMolecule("charged species outside type table")

    bonds = []
    for k in range(n_bonds):
        line = block[4 + n_atoms + k]
        lineno = offset + 5 + n_atoms + k
        try:
            a, b, order = int(line[0:3]), int(line[3:6]), int(line[6:9])
        except ValueError:
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(f"malformed bond line: {line!r}", lineno) from None
            try:
                a, b, order = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise ParseError(f"malformed bond line: {line!r}", lineno) from None
        if not (1 <= a <= n_atoms and 1 <= b <= n_atoms):
            raise ParseError(f"bond references missing atom: {line!r}", lineno)
        bonds.append((a - 1, b - 1, order))

    for line in block[4 + n_atoms + n_bonds:]:
        if line.startswith("M  END"):
            break
        if line.startswith("M  CHG") or line.startswith("M  RAD"):
            vals = line.split()[3:]
            if any(int(v) != 0 for v in vals[1::2]):
                raise RejectedMolecule("charged species outside type table")

    keep = []
    for i, sym in enumerate(symbols):
        if sym == "H" and not spec.explicit_hydrogens:
            continue
        if sym not in spec.vertex_symbols:
            raise RejectedMolecule(f"element outside type table: {sym}")
        keep.append(i)
    new_index = {old: new for new, old in enumerate(keep)}
    edges = []
    for a, b, order in bonds:
        if a not in new_index or b not in new_index:
            continue  # bond to a stripped hydrogen
        name = _SDF_BONDS.get(order)
        if name not in spec.edge_names:
            raise RejectedMolecule(f"bond order {order} outside type table")
        edges.append((new_index[a], new_index[b], spec.edge_names.index(name)))
    g = MolecularGraph(tuple(spec.vertex_index(symbols[i]) for i in keep), tuple(edges))
    if not g.is_connected():
        raise RejectedMolecule("disconnected molecule")
    return g


def write_sdf(graphs: Iterable[MolecularGraph], spec: DatasetSpec) -> str:
    """V2000 text for ``graphs`` with zero coordinates."""
    orders = {spec.edge_names.index(n): o for o, n in _SDF_BONDS.items() if n in spec.edge_names}
    out = []
    for g in graphs:
        out += ["", "  seqmolgen", ""]
        out.append(f"{g.n_vertices:3d}{g.n_edges:3d}  0  0  0  0  0  0  0  0999 V2000")
        for t in g.vertex_types:
            sym = spec.vertex_symbols[t]
            out.append(f"{0.0:10.4f}{0.0:10.4f}{0.0:10.4f} {sym:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
        for u, v, t in g.edges:
            out.append(f"{u + 1:3d}{v + 1:3d}{orders[t]:3d}  0")
        out += ["M  END", "$$$$"]
    return "\n".join(out) + "\n"


# --- SMILES ---------------------------------------------------------------

_ORGANIC = {"C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_AROMATIC_ORGANIC = {"c", "n", "o", "p", "s"}
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic", "/": "single", "\\": "single"}
_BRACKET = re.compile(
    r"^(?P<iso>\d+)?(?P<sym>Cl|Br|se|as|[A-Z][a-z]?|[a-z])(?P<chiral>@(?:@|TH[12]|AL[12]|SP[1-3])?)?"
    r"(?P<h>H\d*)?(?P<charge>[+-]+\d*)?(?::\d+)?$"
)
# smallest valences used to add implicit hydrogens to organic-subset atoms
_DEFAULT_VALENCE = {"C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
                    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,)}


class SmilesError(ParseError):
    pass


def _tokenize(s: str):
    i = 0
    while i < len(s):
        c = s[i]
        if c == "[":
            j = s.find("]", i)
            if j < 0:
                raise SmilesError(f"unclosed bracket atom at position {i}")
            yield "atom", s[i + 1:j], i
            i = j + 1
        elif s.startswith(("Cl", "Br"), i):
            yield "atom", s[i:i + 2], i
            i += 2
        elif c.isalpha():
            yield "atom", c, i
            i += 1
        elif c in _BOND_SYMBOLS or c in "$.":
            yield "bond", c, i
            i += 1
        elif c in "()":
            yield c, c, i
            i += 1
        elif c.isdigit():
            yield "ring", int(c), i
            i += 1
        elif c == "%":
            if not s[i + 1:i + 3].isdigit() or len(s[i + 1:i + 3]) != 2:
                raise SmilesError(f"bad ring label at position {i}")
            yield "ring", int(s[i + 1:i + 3]), i
            i += 3
        else:
            raise SmilesError(f"unexpected character {c!r} at position {i}")


def _atom(token: str, bracket: bool):
    """Return (symbol, aromatic, explicit H count or None)."""
    if not bracket:
        if token in ("B", "b"):
            raise RejectedMolecule("element outside type table: B")
        if token in _AROMATIC_ORGANIC:
            return token.upper(), True, None
        if token in _ORGANIC:
            return token, False, None
        raise SmilesError(f"atom {token!r} must be written in brackets")
    m = _BRACKET.match(token)
    if not m:
        raise SmilesError(f"malformed bracket atom [{token}]")
    if m.group("iso"):
        raise RejectedMolecule("isotopes are outside the modeled type space")
    charge = m.group("charge")
    if charge and charge not in ("+0", "-0"):
        raise RejectedMolecule("charged species outside type table")
    sym = m.group("sym")
    aromatic = sym[0].islower()
    h = m.group("h")
    hcount = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    return (sym.capitalize(), aromatic, hcount)


def parse_smiles(s: str, spec: DatasetSpec) -> MolecularGraph:
    """Parse a SMILES string into a graph.

    Heavy atoms only for specs without explicit hydrogens; otherwise implicit
    hydrogens are added as vertices after the heavy atoms. Aromatic bonds are
    kept as their own edge type and never kekulized.
    """
    s = s.strip()
    if not s:
        raise SmilesError("empty SMILES")
    symbols: list[str] = []
    aromatic: list[bool] = []
    hcounts: list[int | None] = []
    bonds: dict[tuple[int, int], tuple[str, bool]] = {}  # name, explicit
    prev: int | None = None
    pending: str | None = None
    branch: list[int | None] = []
    rings: dict[int, tuple[int, str | None, int]] = {}

    def add_bond(a: int, b: int, name: str | None, pos: int):
        key = (min(a, b), max(a, b))
        if a == b:
            raise SmilesError(f"ring closure to self at position {pos}")
        if key in bonds:
            raise SmilesError(f"duplicate bond at position {pos}")
        if name is None:
            name = "aromatic" if aromatic[a] and aromatic[b] else "single"
            bonds[key] = (name, False)
        else:
            bonds[key] = (name, True)

    for kind, tok, pos in _tokenize(s):
        if kind == "atom":
            sym, aro, hc = _atom(tok, s[pos] == "[")
            if sym == "H" and not spec.explicit_hydrogens:
                raise RejectedMolecule("explicit hydrogen atom in heavy-atom mode")
            idx = len(symbols)
            symbols.append(sym)
            aromatic.append(aro)
            hcounts.append(hc)
            if prev is not None:
                add_bond(prev, idx, pending, pos)
            elif pending is not None:
                raise SmilesError(f"bond without preceding atom at position {pos}")
            pending = None
            prev = idx
        elif kind == "bond":
            if tok == "$":
                raise RejectedMolecule("quadruple bond outside type table")
            if tok == ".":
                raise RejectedMolecule("disconnected molecule")
            if pending is not None or prev is None:
                raise SmilesError(f"misplaced bond symbol at position {pos}")
            pending = _BOND_SYMBOLS[tok]
        elif kind == "(":
            if prev is None:
                raise SmilesError(f"branch without preceding atom at position {pos}")
            branch.append(prev)
        elif kind == ")":
            if not branch:
                raise SmilesError(f"unmatched ')' at position {pos}")
            if pending is not None:
                raise SmilesError(f"dangling bond at position {pos}")
            prev = branch.pop()
        elif kind == "ring":
            if prev is None:
                raise SmilesError(f"ring label without atom at position {pos}")
            if tok in rings:
                other, name, _ = rings.pop(tok)
                if name is not None and pending is not None and name != pending:
                    raise SmilesError(f"conflicting ring bond orders at position {pos}")
                add_bond(other, prev, pending or name, pos)
            else:
                rings[tok] = (prev, pending, pos)
            pending = None
    if branch:
        raise SmilesError("unmatched '('")
    if rings:
        label, (_, _, pos) = next(iter(rings.items()))
        raise SmilesError(f"unclosed ring label {label} at position {pos}")
    if pending is not None:
        raise SmilesError("dangling bond at end of string")

    # implicit aromatic bonds that close no aromatic ring are single bonds
    implicit_aro = [k for k, (n, explicit) in bonds.items() if n == "aromatic" and not explicit]
    if implicit_aro:
        aro_edges = {k for k, (n, _) in bonds.items() if n == "aromatic"}
        for key in implicit_aro:
            if not _on_cycle(key, aro_edges):
                bonds[key] = ("single", False)

    for sym in symbols:
        if sym not in spec.vertex_symbols:
            raise RejectedMolecule(f"element outside type table: {sym}")
    edges = []
    for (a, b), (name, _) in sorted(bonds.items()):
        if name not in spec.edge_names:
            raise RejectedMolecule(f"{name} bond outside type table")
        edges.append((a, b, spec.edge_names.index(name)))
    types = [spec.vertex_index(x) for x in symbols]

    if spec.explicit_hydrogens:
        order = {"single": 1, "double": 2, "triple": 3}
        used = [0] * len(symbols)
        for (a, b), (name, _) in bonds.items():
            used[a] += order[name]
            used[b] += order[name]
        h = spec.vertex_index("H")
        for i, sym in enumerate(symbols):
            n_h = hcounts[i]
            if n_h is None:
                vals = [v for v in _DEFAULT_VALENCE.get(sym, ()) if v >= used[i]]
                n_h = vals[0] - used[i] if vals else 0
            for _ in range(n_h):
                types.append(h)
                edges.append((i, len(types) - 1, order_index(spec, "single")))
    g = MolecularGraph(tuple(types), tuple(edges))
    if not g.is_connected():
        raise RejectedMolecule("disconnected molecule")
    return g


def order_index(spec: DatasetSpec, name: str) -> int:
    return spec.edge_names.index(name)


def _on_cycle(edge: tuple[int, int], edge_set: set[tuple[int, int]]) -> bool:
    """Whether ``edge`` lies on a cycle of the graph formed by ``edge_set``."""
    a, b = edge
    adj: dict[int, list[int]] = {}
    for u, v in edge_set:
        if (u, v) == edge:
            continue
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    seen = {a}
    stack = [a]
    while stack:
        x = stack.pop()
        if x == b:
            return True
        for y in adj.get(x, ()):
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return False


def read_smiles_file(path: str | os.PathLike, spec: DatasetSpec) -> SdfResult:
    """One SMILES per line (first whitespace-separated field)."""
    result = SdfResult()
    for k, line in enumerate(Path(path).read_text().splitlines()):
        parts = line.split()
        if not parts or parts[0].lower() == "smiles":
            continue
        result.raw_count += 1
        try:
            result.graphs.append(parse_smiles(parts[0], spec))
        except (ParseError, RejectedMolecule, GraphError) as exc:
            result.diagnostics.append(Diagnostic(result.raw_count - 1, k + 1, str(exc)))
    return result


# --- splits and caches ----------------------------------------------------

def split_dataset(graphs: Sequence, split: SplitSpec):
    """Seeded shuffle, then partition into (train, test, validation)."""
    total = split.train + split.test + split.valid
    if total != len(graphs):
        raise ValueError(f"split sizes sum to {total}, dataset has {len(graphs)} graphs")
    if min(split.train, split.test, split.valid) < 0:
        raise ValueError("negative split size")
    perm = np.random.default_rng(split.seed).permutation(len(graphs))
    items = [graphs[k] for k in perm]
    a, b = split.train, split.train + split.test
    return items[:a], items[a:b], items[b:]


def graph_record(g: MolecularGraph) -> dict:
    return {"vertex_types": list(g.vertex_types), "edges": [list(e) for e in g.edges]}


def graph_from_record(rec: dict) -> MolecularGraph:
    return MolecularGraph(tuple(rec["vertex_types"]), tuple(tuple(e) for e in rec["edges"]))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | os.PathLike, header: dict, records: Iterable[dict]) -> None:
    """Write a header line then one record per line, atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w") as fh:
        fh.write(dumps(header) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
    os.replace(tmp, path)


def read_jsonl(path: str | os.PathLike) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        return header, [json.loads(line) for line in fh if line.strip()]


def write_graph_cache(path, graphs: Iterable[MolecularGraph], spec: DatasetSpec,
                      extra: Iterable[dict] | None = None, **header_fields) -> None:
    header = {"format": CACHE_FORMAT, "version": CACHE_VERSION, "mode": spec.mode.value}
    header.update(header_fields)
    graphs = list(graphs)
    extras = list(extra) if extra is not None else [{}] * len(graphs)
    write_jsonl(path, header, ({**graph_record(g), **x} for g, x in zip(graphs, extras)))


def read_graph_cache(path) -> tuple[DatasetSpec, list[MolecularGraph], list[dict]]:
    header, records = read_jsonl(path)
    if header.get("format") != CACHE_FORMAT:
        raise ValueError(f"{path}: not a graph cache")
    if header.get("version") != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {header.get('version')}")
    spec = DatasetSpec.for_mode(header["mode"])
    return spec, [graph_from_record(r) for r in records], records
