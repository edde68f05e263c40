"""Acceptance criteria, one test each. Every test prints (and records for the
terminal summary) a single PASS/FAIL line with the measured values."""

import os
import time
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

import conftest
from conftest import DATA
from helpers import StubPolicy, golden_models, metric_fixture, random_graph
from oracles import brute_betweenness, brute_isomorphic, numeric_grads
from seqmolgen import evaluator, generator, gnn, ingest, modules, sequencer
from seqmolgen.generator import ReplayPolicy, SeedDistribution, run_lockstep
from seqmolgen.gnn import GnnModel, GraphBatch
from seqmolgen.graph import MolecularGraph, betweenness, is_isomorphic

QM9 = ingest.QM9
QM9_SDF = os.environ.get("SEQMOLGEN_QM9_SDF")


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    conftest.ACCEPTANCE.append(line)
    return ok


def rel_error(a, b, floor=1e-3):
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))))


def test_1_gradient_check():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    worst = 0.0
    for k in range(20):
        head = ("node", "edge")[k % 2]
        n = int(rng.integers(2, 6))
        g = random_graph(rng, n, n_vtypes=3, n_etypes=3, p=0.5)
        model = GnnModel.create(rng, head_kind=head, aggregation=("sum", "avg")[(k // 2) % 2],
                                k_max=int(rng.integers(1, 5)), epsilon=0.0, state_dim=int(rng.integers(4, 9)),
                                label_dim=4, edge_dim=4, n_classes=4, hu_state=5, hu_out=4)
        batch = GraphBatch.from_graphs([g], 4, 4, model.aggregation)
        if head == "node":
            rows = (np.arange(n),)
        else:
            rows = ([e[0] for e in g.edges], [e[1] for e in g.edges], [e[2] for e in g.edges])
        targets = rng.integers(4, size=len(rows[0]))

        def forward(m):
            rel = gnn.relax(m, batch)
            fn = gnn.node_logits if head == "node" else gnn.edge_logits
            logits, cache = fn(m, rel.states, *rows)
            return rel, logits, cache

        rel, logits, cache = forward(model)
        _, d = gnn.batch_xent(logits, targets)
        grads = gnn.backward(model, batch, rel, cache, d)
        num = numeric_grads(model, lambda m: gnn.batch_xent(forward(m)[1], targets)[0])
        worst = max(worst, max(rel_error(grads[p], num[p]) for p in grads))
    dt = time.time() - t0
    ok = worst < 1e-4 and dt < 60
    assert report(1, ok, f"20 instances, max relative error {worst:.2e} (< 1e-4), {dt:.1f} s")


def test_2_gumbel_law():
    rng = np.random.default_rng(7)
    t0 = time.time()
    tvs = []
    for _ in range(5):
        c = int(rng.integers(2, 7))
        logits = rng.normal(0, 1.5, size=c)
        hard, _ = gnn.gumbel_sample(np.tile(logits, (100_000, 1)), 1.0, rng)
        freq = np.bincount(hard, minlength=c) / 100_000
        tvs.append(0.5 * np.abs(freq - gnn.softmax(logits)).sum())
    dt = time.time() - t0
    ok = max(tvs) <= 0.01 and dt < 60
    assert report(2, ok, f"5 logit vectors x 1e5 draws, max TV {max(tvs):.4f} (<= 0.01), {dt:.1f} s")


def test_3_replay_oracle():
    t0 = time.time()
    res = ingest.read_sdf(DATA / "toy200.sdf", QM9)
    assert res.accepted_count == 200
    rng = np.random.default_rng(3)
    prio = sequencer.type_priority_from_centrality(res.graphs, QM9.n_vertex_types)
    iso = lengths = 0
    for g in res.graphs:
        ro = sequencer.reorder(g, prio, rng)
        steps = sequencer.decompose(ro, QM9.candidate_edge)
        n = g.n_vertices
        lengths += len(steps.m1) == 2 * n - 1 and len(steps.m2) == n - 1
        policy = ReplayPolicy(steps, QM9.candidate_edge)
        out = run_lockstep(policy, [ro.vertex_types[0]], [rng], n, 1.0, QM9.candidate_edge)[0]
        iso += out.complete and policy.exhausted() and is_isomorphic(out.graph, g)
    dt = time.time() - t0
    ok = iso == 200 and lengths == 200 and dt < 60
    assert report(3, ok, f"{iso}/200 isomorphic reconstructions, {lengths}/200 with |m1| = 2|V|-1 and "
                         f"|m2| = |V|-1, {dt:.1f} s")


def test_4_connectivity_and_cap():
    t0 = time.time()
    models = golden_models(seed=4)
    d0 = SeedDistribution((0.0, 0.6, 0.2, 0.2, 0.0))
    outs = generator.generate_batch(10_000, models, d0, 29, 1.0, np.random.default_rng(4))
    connected = sum(o.graph.is_connected() for o in outs)
    capped = sum(o.graph.n_vertices <= 29 for o in outs)
    never = StubPolicy(lambda q, r: 2)
    stub = generator.generate_batch(1000, never, d0, 29, 1.0, np.random.default_rng(5))
    hit = sum(o.graph.n_vertices == 29 and not o.complete for o in stub)
    dt = time.time() - t0
    ok = connected == 10_000 and capped == 10_000 and hit == 1000 and dt < 300
    assert report(4, ok, f"random modules: {connected}/10000 connected, {capped}/10000 with |V| <= 29 "
                         f"({sum(o.complete for o in outs)} complete); never-stop stub: {hit}/1000 at |V| = 29 "
                         f"and incomplete; {dt:.1f} s")


def _atlas(max_n):
    for G in nx.graph_atlas_g():
        if 0 < G.number_of_nodes() <= max_n and nx.is_connected(G):
            yield MolecularGraph((0,) * G.number_of_nodes(), tuple((u, v, 0) for u, v in G.edges()))


def test_5_graph_oracles():
    t0 = time.time()
    # the atlas holds every graph up to 7 vertices, so |V| = 7 is covered
    # exhaustively as well
    graphs = list(_atlas(7))
    worst = max(float(np.max(np.abs(betweenness(g) - brute_betweenness(g)), initial=0.0)) for g in graphs)
    rng = np.random.default_rng(55)
    agree = 0
    for k in range(500):
        n = int(rng.integers(1, 7))
        g1 = random_graph(rng, n, 2, 2, p=0.5, connected=bool(k % 2))
        # half the pairs are relabeled copies (possibly with one label flipped)
        if k % 4 < 2:
            g2 = g1.relabel([int(x) for x in rng.permutation(n)])
            if k % 4 == 1 and g2.n_edges:
                e = list(g2.edges)
                u, v, t = e[0]
                e[0] = (u, v, 1 - t)
                g2 = MolecularGraph(g2.vertex_types, tuple(e))
        else:
            g2 = random_graph(rng, n, 2, 2, p=0.5, connected=bool(k % 2))
        agree += is_isomorphic(g1, g2) == brute_isomorphic(g1, g2)
    dt = time.time() - t0
    ok = worst <= 1e-12 and agree == 500 and dt < 300
    assert report(5, ok, f"betweenness on all {len(graphs)} connected graphs with |V| <= 7: "
                         f"max abs error {worst:.1e}; isomorphism {agree}/500 agree; {dt:.1f} s")


def test_6_metric_identities():
    batch, ref = metric_fixture()
    r = evaluator.evaluate(batch, ref, QM9)
    fixture_ok = (r.validity == 0.75 and abs(r.uniqueness - 2 / 3) < 1e-12 and r.novelty == 0.5
                  and abs(r.vun - 0.25) < 1e-12)
    product = 0.511 * 0.888 * 1.000
    ok = fixture_ok and abs(product - 0.454) <= 0.001
    assert report(6, ok, f"fixture V {r.validity} U {r.uniqueness:.4f} N {r.novelty} VUN {r.vun:.4f}; "
                         f"0.511 x 0.888 x 1.000 = {product:.4f}")


def _desk_corpus():
    if QM9_SDF:
        res = ingest.read_sdf(QM9_SDF, QM9)
        return f"QM9 file {Path(QM9_SDF).name}", res.graphs
    return "QM9-like surrogate (tests/data/qm9_surrogate.smi)", \
        ingest.read_smiles_file(DATA / "qm9_surrogate.smi", QM9).graphs


DESK_EPOCHS = 100


@pytest.mark.slow
def test_7_desk_training():
    t0 = time.time()
    source, graphs = _desk_corpus()
    rng = np.random.default_rng(7)
    pick = rng.permutation(len(graphs))[:2000]
    graphs = [graphs[k] for k in pick]
    train, valid = graphs[:1600], graphs[1600:1800]
    prio = sequencer.type_priority_from_centrality(train, QM9.n_vertex_types)
    train_o = [sequencer.reorder(g, prio, rng) for g in train]
    valid_o = [sequencer.reorder(g, prio, rng) for g in valid]
    ts = sequencer.build_training_set(train_o, QM9.candidate_edge)
    vs = sequencer.build_training_set(valid_o, QM9.candidate_edge)
    sequencer.make_batches(ts, 20, rng)
    trained, parts, acc_ok = [], [], True
    for kind, name in zip(("m1", "m2", "m3"), modules.CONFIGURATIONS["C1"]):
        cfg = modules.preset(name, epochs=DESK_EPOCHS, seed=int(rng.integers(2**31)))
        batches = [ts.examples(kind, b) for b in ts.batches]
        module, log = modules.train_module(kind, batches, cfg, QM9, vs.examples(kind))
        best = log.epochs[log.best_epoch]["valid_accuracy"]
        margin = best - log.majority_baseline
        acc_ok &= margin >= 0.10
        parts.append(f"{kind} acc {best:.3f} vs majority {log.majority_baseline:.3f} ({100 * margin:+.1f} pp)")
        trained.append(module)
    d0 = generator.estimate_d0(train_o, QM9.n_vertex_types)
    outs = generator.generate_batch(1000, tuple(trained), d0, 29, 1.0, np.random.default_rng(77))
    rep = evaluator.evaluate(outs, graphs, QM9)
    conn = evaluator.connected_fraction(outs)
    gen_ok = rep.validity >= 0.2 and rep.novelty >= 0.9 and conn == 1.0
    dt = time.time() - t0
    ok = acc_ok and gen_ok and dt < 7200
    assert report(7, ok, f"[{source}, C1 presets at {DESK_EPOCHS} epochs] " + "; ".join(parts)
                  + f"; generation validity {rep.validity:.3f} novelty {rep.novelty:.3f} "
                    f"uniqueness {rep.uniqueness:.3f} connected {conn:.3f}"
                  + f" (accuracy part {'met' if acc_ok else 'not met'}, generation part "
                    f"{'met' if gen_ok else 'not met'}); {dt / 60:.1f} min")


@pytest.mark.dataset
@pytest.mark.skipif(not QM9_SDF, reason="set SEQMOLGEN_QM9_SDF to the full QM9 SDF")
def test_8_dataset_values():
    res = ingest.read_sdf(QM9_SDF, QM9)
    graphs = res.graphs
    rng = np.random.default_rng(8)
    perm = rng.permutation(len(graphs))
    n_train = min(120_000, len(graphs) - 10_000)
    train = [graphs[k] for k in perm[:n_train]]
    test = [graphs[k] for k in perm[n_train:n_train + 10_000]]
    prio = sequencer.type_priority_from_centrality(train, QM9.n_vertex_types)
    expected = {"H": 0.0, "C": 0.382, "N": 0.246, "O": 0.115, "F": 0.0}
    cent = dict(zip(QM9.vertex_symbols, prio.centrality))
    cent_ok = all(abs(cent[s] - v) <= 0.02 for s, v in expected.items())
    mw = evaluator.descriptor_report(test, QM9).mw_mean
    ok = cent_ok and abs(mw - 127.3) <= 5
    assert report(8, ok, "centrality " + ", ".join(f"{s} {cent[s]:.3f}" for s in expected)
                  + f"; test mean weight {mw:.1f} (127.3 +- 5)")
