"""Small graph builders shared by the tests."""

import numpy as np

from seqmolgen import ingest, modules
from seqmolgen.graph import MolecularGraph


def methane() -> MolecularGraph:
    return MolecularGraph((1, 0, 0, 0, 0), tuple((0, k, 0) for k in range(1, 5)))


def water() -> MolecularGraph:
    return MolecularGraph((3, 0, 0), ((0, 1, 0), (0, 2, 0)))


def random_graph(rng: np.random.Generator, n: int, n_vtypes: int = 3, n_etypes: int = 2,
                 p: float = 0.4, connected: bool = True) -> MolecularGraph:
    """Random labeled graph; a random spanning tree first when ``connected``."""
    edges = {}
    if connected:
        for v in range(1, n):
            edges[(int(rng.integers(v)), v)] = int(rng.integers(n_etypes))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < p:
                edges[(u, v)] = int(rng.integers(n_etypes))
    types = tuple(int(t) for t in rng.integers(n_vtypes, size=n))
    return MolecularGraph(types, tuple((u, v, t) for (u, v), t in edges.items()))


def shuffled(g: MolecularGraph, rng: np.random.Generator) -> MolecularGraph:
    return g.relabel([int(k) for k in rng.permutation(g.n_vertices)])


def golden_models(seed=11):
    """Untrained m1/m2/m3 modules with fixed random weights (QM9 mode)."""
    rng = np.random.default_rng(seed)
    out = []
    for name in ("M1-I", "M2-I", "M3-I"):
        cfg = modules.preset(name, epochs=0, seed=int(rng.integers(2**31)), state_dim=8)
        out.append(modules.train_module(cfg.kind, [], cfg, ingest.QM9)[0])
    return out


def saturated(module, cls, value=60.0):
    """Copy of ``module`` whose output is ``cls`` regardless of input."""
    m = module.model.copy()
    m.params["out_W2"][:] = 0.0
    m.params["out_b2"][:] = 0.0
    m.params["out_b2"][cls] = value
    return modules.TrainedModule(module.kind, m, module.mode, module.priors.copy(),
                                 module.class_weighted, module.focus_flag, module.preset)


class StubPolicy:
    """Answers queries with plain functions of (query, rng)."""

    def __init__(self, m1, m2=lambda q, rng: 0, m3=lambda q, rng: {}, candidate=ingest.QM9.candidate_edge):
        self.funcs = {modules.ModuleKind.M1: m1, modules.ModuleKind.M2: m2, modules.ModuleKind.M3: m3}
        self.candidate = candidate
        self.seen = []

    def decide(self, queries, rngs, tau):
        self.seen.extend(queries)
        return [self.funcs[q.kind](q, r) for q, r in zip(queries, rngs)]


def metric_fixture():
    """Four outcomes: two identical valid molecules that are in the
    reference, one valid novel molecule, one valence violation.

    Hand count: validity 3/4, uniqueness 2/3, novelty 1/2, vun 1/4.
    """
    from seqmolgen.generator import GenerationOutcome

    ethanol = ingest.parse_smiles("CCO", ingest.QM9)
    methylamine = ingest.parse_smiles("CN", ingest.QM9)
    pentavalent = MolecularGraph((1,) + (0,) * 5, tuple((0, k, 0) for k in range(1, 6)))
    batch = [GenerationOutcome(ethanol, True), GenerationOutcome(ethanol.relabel(list(range(9))[::-1]), True),
             GenerationOutcome(methylamine, True), GenerationOutcome(pentavalent, True)]
    reference = [ethanol, methane(), water()]
    return batch, reference
