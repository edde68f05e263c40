"""Compute and freeze golden values used by the regression tests.

Every value is computed twice, by the package and by the slow reference code
in tests/oracles.py, and written only if the two agree.

    python tools/freeze_golden.py tests/data/golden.json
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

import oracles  # noqa: E402
from helpers import golden_models  # noqa: E402

from seqmolgen import gnn, ingest, modules, sequencer  # noqa: E402
from seqmolgen.generator import SeedDistribution, generate  # noqa: E402
from seqmolgen.graph import MolecularGraph, TypePriority, bfs_order, is_isomorphic  # noqa: E402

QM9 = ingest.QM9


def main(path):
    doc = {}
    methane = MolecularGraph((1, 0, 0, 0, 0), tuple((0, k, 0) for k in range(1, 5)))
    order = bfs_order(methane, 0, TypePriority.identity(5), np.random.default_rng(7))
    assert order[0] == 0 and sorted(order) == list(range(5))
    doc["methane_bfs_seed7"] = list(order)

    ethanol = ingest.parse_smiles("CCO", QM9)
    prio = TypePriority.from_scores([0.0, 0.382, 0.246, 0.115, 0.0])
    ro = sequencer.reorder(ethanol, prio, np.random.default_rng(3))
    assert is_isomorphic(ro, ethanol)
    doc["ethanol"] = ingest.graph_record(ethanol)
    doc["ethanol_reordered_seed3"] = ingest.graph_record(ro)

    m1, m2, m3 = golden_models()
    states, k = gnn.state_relax(ro, m1.model)
    ref_states, ref_k = oracles.dense_relax(m1.model, ro)
    assert k == ref_k and np.allclose(states, ref_states, atol=1e-12)
    logits = gnn.node_head(states, 0, m1.model)
    assert np.allclose(logits, oracles.dense_head(m1.model, ref_states[0]), atol=1e-12)
    doc["node_logits"] = {"k_star": k, "logits": logits.tolist()}

    g2 = MolecularGraph(ro.vertex_types, ro.edges[:-1] + ((ro.edges[-1][0], ro.edges[-1][1], QM9.candidate_edge),))
    u, v, _ = ro.edges[-1]
    s2, k2 = gnn.state_relax(g2, m2.model)
    r2, rk2 = oracles.dense_relax(m2.model, g2)
    assert k2 == rk2 and np.allclose(s2, r2, atol=1e-12)
    elog = gnn.edge_head(s2, (u, v), QM9.candidate_edge, m2.model)
    ref = oracles.dense_head(m2.model, oracles.dense_edge_input(r2, u, v, QM9.candidate_edge, m2.model.edge_dim))
    assert np.allclose(elog, ref, atol=1e-12)
    doc["edge_graph"] = ingest.graph_record(g2)
    doc["edge_logits"] = {"edge": [u, v], "k_star": k2, "logits": elog.tolist()}

    rng, ref_rng = np.random.default_rng(5), np.random.default_rng(5)
    trace = [modules.m1_decide(ro, 0, m1, 1.0, rng) for _ in range(20)]
    assert trace == [oracles.gumbel_max(logits, ref_rng) for _ in range(20)]
    doc["m1_trace_seed5"] = trace

    rng, ref_rng = np.random.default_rng(9), np.random.default_rng(9)
    d = modules.m2_decide(g2, u, v, m2, 1.0, rng)
    assert d == oracles.gumbel_max(elog, ref_rng)
    doc["m2_decision_seed9"] = d

    out = generate((m1, m2, m3), SeedDistribution((0.0, 1.0, 0.0, 0.0, 0.0)), 12, 1.0, np.random.default_rng(21))
    doc["generation_seed21"] = {"graph": ingest.graph_record(out.graph), "complete": out.complete,
                                "trace": out.trace}

    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/golden.json")
