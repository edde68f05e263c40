"""Generation metrics and molecular-weight statistics.

validity    |Val| / |Gen|, Val = complete outcomes passing the valence check
uniqueness  |uniq(Val)| / |Val|, counting Val as a multiset
novelty     share of uniq(Val) absent from the reference set
vun         validity * uniqueness * novelty
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chem import check_valence, molecular_weight
from .generator import GenerationOutcome
from .graph import MolecularGraph, canonical_key, is_isomorphic, refine_colors
from .ingest import DatasetSpec

REPORT_FORMAT = "seqmolgen-eval"
REPORT_VERSION = 1

MW_BINS = (0.0, 600.0, 60)  # lo, hi, count: 10 Da bins
LOG_MW_BINS = (0.0, 7.0, 70)


class IsoIndex:
    """Set of graphs up to isomorphism: hash bucket by canonical key, then
    an exact check inside the bucket."""

    def __init__(self, graphs: Iterable[MolecularGraph] = ()):
        self._buckets: dict[bytes, list[tuple[MolecularGraph, list[bytes]]]] = {}
        self.size = 0
        for g in graphs:
            self.add(g)

    def _find(self, g: MolecularGraph, colors: list[bytes]) -> tuple[bytes, bool]:
        key = canonical_key(g)
        for h, hc in self._buckets.get(key, ()):
            if is_isomorphic(g, h, colors, hc):
                return key, True
        return key, False

    def add(self, g: MolecularGraph) -> bool:
        """Insert ``g``; False if an isomorphic graph was already present."""
        colors = refine_colors(g)
        key, found = self._find(g, colors)
        if found:
            return False
        self._buckets.setdefault(key, []).append((g, colors))
        self.size += 1
        return True

    def __contains__(self, g: MolecularGraph) -> bool:
        return self._find(g, refine_colors(g))[1]

    def __len__(self) -> int:
        return self.size


@dataclass
class Histogram:
    lo: float
    hi: float
    bins: int
    counts: list[int]
    underflow: int = 0
    overflow: int = 0

    @classmethod
    def of(cls, values: Sequence[float], spec: tuple[float, float, int]) -> Histogram:
        lo, hi, n = spec
        v = np.asarray(values, dtype=float)
        counts, _ = np.histogram(v[(v >= lo) & (v <= hi)], bins=n, range=(lo, hi))
        return cls(lo, hi, n, counts.tolist(), int((v < lo).sum()), int((v > hi).sum()))

    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bins + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        e = self.edges()
        for a, b, c in zip(e[:-1], e[1:], self.counts):
            w.writerow([f"{a:g}", f"{b:g}", c])
        return buf.getvalue()


@dataclass
class DescriptorReport:
    count: int
    mw_mean: float
    mw_std: float  # population standard deviation
    mw_hist: Histogram
    log_mw_hist: Histogram
    atom_counts: dict[str, float]  # mean per molecule
    bond_counts: dict[str, float]
    notes: list[str] = field(default_factory=list)


def descriptor_report(graphs: Sequence[MolecularGraph], spec: DatasetSpec) -> DescriptorReport:
    if not graphs:
        raise ValueError("no molecules to describe")
    mw = np.array([molecular_weight(g, spec) for g in graphs])
    atoms = np.zeros(spec.n_vertex_types)
    bonds = np.zeros(spec.n_edge_types)
    for g in graphs:
        atoms += np.bincount(g.vertex_types, minlength=spec.n_vertex_types)[: spec.n_vertex_types]
        bonds += np.bincount([t for _, _, t in g.edges], minlength=spec.n_edge_types)[: spec.n_edge_types]
    n = len(graphs)
    return DescriptorReport(
        count=n,
        mw_mean=float(mw.mean()),
        mw_std=float(mw.std()),
        mw_hist=Histogram.of(mw, MW_BINS),
        log_mw_hist=Histogram.of(np.log(mw), LOG_MW_BINS),
        atom_counts={s: float(c / n) for s, c in zip(spec.vertex_symbols, atoms)},
        bond_counts={s: float(c / n) for s, c in zip(spec.edge_names, bonds)},
        notes=["logP and QED are not computed; weight and composition only"],
    )


@dataclass
class EvalReport:
    n_generated: int
    n_valid: int
    n_unique: int
    n_novel: int
    n_complete: int
    validity: float
    uniqueness: float
    novelty: float
    vun: float
    degenerate: bool = False  # no valid molecules: uniqueness and novelty set to 0
    multiset: bool = True  # Val counted with multiplicity
    descriptors: DescriptorReport | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        d["version"] = REPORT_VERSION
        return d


def metric_fractions(n_gen: int, n_valid: int, n_unique: int, n_novel: int):
    """(validity, uniqueness, novelty, vun, degenerate) from the four counts."""
    validity = n_valid / n_gen if n_gen else 0.0
    if n_valid == 0:
        return validity, 0.0, 0.0, 0.0, True
    uniqueness = n_unique / n_valid
    novelty = n_novel / n_unique
    return validity, uniqueness, novelty, validity * uniqueness * novelty, False


def evaluate(batch: Sequence[GenerationOutcome], reference: IsoIndex | Sequence[MolecularGraph],
             spec: DatasetSpec, describe: bool = True) -> EvalReport:
    """Score a generated batch. ``reference`` should hold the whole dataset
    (all splits); pass a prebuilt ``IsoIndex`` to reuse it across batches."""
    if not batch:
        raise ValueError("empty batch")
    if not isinstance(reference, IsoIndex):
        reference = IsoIndex(reference)
    valid = [o.graph for o in batch if o.complete and check_valence(o.graph, spec)[0]]
    uniq = IsoIndex()
    novel = 0
    for g in valid:
        if uniq.add(g) and g not in reference:
            novel += 1
    v, u, nv, vun, degenerate = metric_fractions(len(batch), len(valid), len(uniq), novel)
    return EvalReport(
        n_generated=len(batch),
        n_valid=len(valid),
        n_unique=len(uniq),
        n_novel=novel,
        n_complete=sum(o.complete for o in batch),
        validity=v,
        uniqueness=u,
        novelty=nv,
        vun=vun,
        degenerate=degenerate,
        descriptors=descriptor_report(valid, spec) if describe and valid else None,
    )


def connected_fraction(batch: Sequence[GenerationOutcome]) -> float:
    return sum(o.graph.is_connected() for o in batch) / len(batch) if batch else math.nan
