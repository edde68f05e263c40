import math

import numpy as np
import pytest

from seqmolgen import gnn
from seqmolgen.gnn import AnnealSchedule, GnnModel, GraphBatch, OptimizerState
from seqmolgen.graph import MolecularGraph
from seqmolgen.ingest import graph_from_record

from helpers import golden_models, random_graph
from oracles import dense_edge_input, dense_head, dense_relax, numeric_grads


def make_model(rng, head="node", agg="sum", k_max=3, eps=0.0, d=6, label_dim=3, edge_dim=3, classes=4):
    return GnnModel.create(rng, head_kind=head, aggregation=agg, k_max=k_max, epsilon=eps, state_dim=d,
                           label_dim=label_dim, edge_dim=edge_dim, n_classes=classes, hu_state=5, hu_out=4)


def loss_and_grads(model, g, targets, weights=None):
    """Mean cross-entropy of every vertex (node head) or edge (edge head)."""
    batch = GraphBatch.from_graphs([g], model.label_dim, model.edge_dim, model.aggregation)

    def forward(m):
        rel = gnn.relax(m, batch)
        if m.head_kind == "node":
            logits, cache = gnn.node_logits(m, rel.states, np.arange(g.n_vertices))
        else:
            u = [e[0] for e in g.edges]
            v = [e[1] for e in g.edges]
            logits, cache = gnn.edge_logits(m, rel.states, u, v, [e[2] for e in g.edges])
        return rel, logits, cache

    def loss(m):
        return gnn.batch_xent(forward(m)[1], targets, weights)[0]

    rel, logits, cache = forward(model)
    _, d = gnn.batch_xent(logits, targets, weights)
    return loss, gnn.backward(model, batch, rel, cache, d)


def rel_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))


class TestGradients:
    @pytest.mark.parametrize("head", ["node", "edge"])
    @pytest.mark.parametrize("agg", ["sum", "avg"])
    @pytest.mark.parametrize("k_max", [1, 2, 4])
    def test_matches_finite_differences(self, head, agg, k_max):
        rng = np.random.default_rng(hash((head, agg, k_max)) % 2**32)
        g = random_graph(rng, 4, n_vtypes=3, n_etypes=3, p=0.5)
        model = make_model(rng, head, agg, k_max)
        n_rows = g.n_vertices if head == "node" else g.n_edges
        targets = rng.integers(4, size=n_rows)
        weights = rng.uniform(0.5, 2.0, size=4)
        loss, grads = loss_and_grads(model, g, targets, weights)
        num = numeric_grads(model, loss)
        for name in grads:
            assert rel_error(grads[name], num[name]) < 1e-4, name

    def test_early_convergence_unrolls_only_k_star(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng, 4, n_vtypes=3, n_etypes=3)
        model = make_model(rng, k_max=30, eps=1e-3)
        for name in ("state_W1", "state_W2"):
            model.params[name] *= 0.3  # contraction, converges well before k_max
        batch = GraphBatch.from_graphs([g], 3, 3, "sum")
        rel = gnn.relax(model, batch)
        assert 1 < rel.k_star[0] < 30 and len(rel.trajectory) == rel.k_star[0]
        targets = rng.integers(4, size=g.n_vertices)
        loss, grads = loss_and_grads(model, g, targets)
        num = numeric_grads(model, loss, h=1e-6)
        for name in grads:
            assert rel_error(grads[name], num[name]) < 1e-4

    def test_k_max_one_by_hand(self):
        rng = np.random.default_rng(4)
        g = MolecularGraph((0, 1), ((0, 1, 2),))
        m = make_model(rng, k_max=1, d=4, label_dim=2, edge_dim=3, classes=3)
        p = m.params
        target = 2
        # forward for vertex 0 by hand
        s0 = np.array([1.0, 0, 0, 0]); s1 = np.array([0, 1.0, 0, 0])
        e = np.array([0, 0, 1.0])
        x = np.concatenate([s0, s1, e])
        h = np.tanh(x @ p["state_W1"] + p["state_b1"])
        s = h @ p["state_W2"] + p["state_b2"]
        ho = np.tanh(s @ p["out_W1"] + p["out_b1"])
        z = ho @ p["out_W2"] + p["out_b2"]
        prob = np.exp(z - z.max()); prob /= prob.sum()
        dz = prob.copy(); dz[target] -= 1.0
        dho = (dz @ p["out_W2"].T) * (1 - ho ** 2)
        ds = dho @ p["out_W1"].T
        dh = (ds @ p["state_W2"].T) * (1 - h ** 2)
        expected = {
            "out_W2": np.outer(ho, dz), "out_b2": dz, "out_W1": np.outer(s, dho), "out_b1": dho,
            "state_W2": np.outer(h, ds), "state_b2": ds, "state_W1": np.outer(x, dh), "state_b1": dh,
        }
        batch = GraphBatch.from_graphs([g], 2, 3, "sum")
        rel = gnn.relax(m, batch)
        logits, cache = gnn.node_logits(m, rel.states, [0])
        np.testing.assert_allclose(logits[0], z, atol=1e-12)
        _, d = gnn.batch_xent(logits, np.array([target]))
        grads = gnn.backward(m, batch, rel, cache, d)
        for name, val in expected.items():
            np.testing.assert_allclose(grads[name], val, atol=1e-12, err_msg=name)

    def test_saturated_loss_near_zero_gradients(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, 3, n_vtypes=3, n_etypes=3)
        m = make_model(rng)
        m.params["out_b2"][:] = [60.0, 0, 0, 0]
        _, grads = loss_and_grads(m, g, np.zeros(3, dtype=int))
        assert max(np.abs(v).max() for v in grads.values()) < 1e-20


class TestRelax:
    def test_fixed_point_at_start(self):
        m = make_model(np.random.default_rng(0), eps=1e-6)
        m.params["state_W1"][:] = 0.0
        m.params["state_b2"][:] = [1, 0, 0, 0, 0, 0]  # F returns the initial state of a type-0 vertex
        g = MolecularGraph((0, 0, 0), ((0, 1, 0), (1, 2, 1)))
        states, k = gnn.state_relax(g, m)
        assert k == 1
        np.testing.assert_array_equal(states, np.tile([1.0, 0, 0, 0, 0, 0], (3, 1)))

    def test_lone_vertex(self):
        m = make_model(np.random.default_rng(1), agg="avg", eps=1e-3, k_max=5)
        states, k = gnn.state_relax(MolecularGraph((2,), ()), m)
        ref, ref_k = dense_relax(m, MolecularGraph((2,), ()))
        assert 1 <= k <= 5 and k == ref_k
        np.testing.assert_allclose(states, ref, atol=1e-12)

    def test_epsilon_zero_runs_k_max(self):
        rng = np.random.default_rng(2)
        m = make_model(rng, k_max=7, eps=0.0)
        assert gnn.state_relax(random_graph(rng, 5), m)[1] == 7

    @pytest.mark.parametrize("agg", ["sum", "avg"])
    def test_matches_dense_reference(self, agg):
        rng = np.random.default_rng(6)
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(1, 8)), n_vtypes=3, n_etypes=3)
            m = make_model(rng, agg=agg, k_max=6, eps=1e-2)
            states, k = gnn.state_relax(g, m)
            ref, ref_k = dense_relax(m, g)
            assert k == ref_k
            np.testing.assert_allclose(states, ref, atol=1e-12)

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng, 7, n_vtypes=3, n_etypes=3)
        m = make_model(rng, agg="avg", k_max=4)
        perm = rng.permutation(7)
        s, _ = gnn.state_relax(g, m)
        s2, _ = gnn.state_relax(g.relabel(perm), m)
        np.testing.assert_allclose(s2, s[perm], atol=1e-12)

    def test_batch_equals_single_graphs(self):
        rng = np.random.default_rng(8)
        graphs = [random_graph(rng, int(rng.integers(1, 7)), n_vtypes=3, n_etypes=3) for _ in range(6)]
        m = make_model(rng, k_max=12, eps=5e-2)
        for name in ("state_W1", "state_W2"):
            m.params[name] *= 0.5
        rel = gnn.relax(m, GraphBatch.from_graphs(graphs, 3, 3, "sum"))
        ks = []
        for gi, g in enumerate(graphs):
            s, k = gnn.state_relax(g, m)
            start = sum(x.n_vertices for x in graphs[:gi])
            np.testing.assert_allclose(rel.states[start:start + g.n_vertices], s, atol=1e-12)
            assert rel.k_star[gi] == k
            ks.append(k)
        assert len(set(ks)) > 1  # graphs really converged at different iterations

    def test_focus_flag(self):
        rng = np.random.default_rng(9)
        m = make_model(rng, label_dim=4)
        g = MolecularGraph((0, 1, 2), ((0, 1, 0), (1, 2, 0)))
        s_a, _ = gnn.state_relax(g, m, focus=0)
        s_b, _ = gnn.state_relax(g, m, focus=2)
        assert not np.allclose(s_a, s_b)
        np.testing.assert_allclose(s_a, dense_relax(m, g, focus=0)[0], atol=1e-12)


class TestHeads:
    def test_wrong_kind(self):
        rng = np.random.default_rng(0)
        node, edge = make_model(rng, "node"), make_model(rng, "edge")
        states = np.zeros((2, 6))
        with pytest.raises(ValueError):
            gnn.node_head(states, 0, edge)
        with pytest.raises(ValueError):
            gnn.edge_head(states, (0, 1), 0, node)

    def test_zero_weights(self):
        rng = np.random.default_rng(1)
        for kind in ("node", "edge"):
            m = make_model(rng, kind)
            m.params["out_W2"][:] = 0.0
            s = rng.normal(size=(3, 6))
            out = gnn.node_head(s, 1, m) if kind == "node" else gnn.edge_head(s, (0, 1), 0, m)
            assert not out.any()

    def test_batched_node_head(self):
        rng = np.random.default_rng(2)
        m = make_model(rng)
        s = rng.normal(size=(5, 6))
        rows = gnn.node_head(s, [0, 3, 4], m)
        for r, v in zip(rows, [0, 3, 4]):
            np.testing.assert_allclose(r, gnn.node_head(s, v, m), atol=1e-14)

    def test_edge_head_is_ordered(self):
        rng = np.random.default_rng(3)
        m = make_model(rng, "edge")
        s = rng.normal(size=(2, 6))
        assert not np.allclose(gnn.edge_head(s, (0, 1), 0, m), gnn.edge_head(s, (1, 0), 0, m))
        np.testing.assert_allclose(gnn.edge_head(s, (0, 1), 2, m),
                                   dense_head(m, dense_edge_input(s, 0, 1, 2, 3)), atol=1e-12)

    def test_golden_logits(self, golden):
        from seqmolgen import ingest
        m1, m2, _ = golden_models()
        g = graph_from_record(golden["ethanol_reordered_seed3"])
        s, k = gnn.state_relax(g, m1.model)
        assert k == golden["node_logits"]["k_star"]
        np.testing.assert_allclose(gnn.node_head(s, 0, m1.model), golden["node_logits"]["logits"], atol=1e-12)
        g2 = graph_from_record(golden["edge_graph"])
        s2, k2 = gnn.state_relax(g2, m2.model)
        assert k2 == golden["edge_logits"]["k_star"]
        u, v = golden["edge_logits"]["edge"]
        np.testing.assert_allclose(gnn.edge_head(s2, (u, v), ingest.QM9.candidate_edge, m2.model),
                                   golden["edge_logits"]["logits"], atol=1e-12)


class TestLoss:
    def test_uniform(self):
        assert gnn.xent_loss(np.zeros(5), 2) == pytest.approx(math.log(5))

    def test_confident(self):
        assert gnn.xent_loss(np.array([0.0, 100.0, 0.0]), 1) < 1e-30

    def test_inverse_prior_weight(self):
        priors = np.array([0.97, 0.01, 0.01, 0.01])
        logits = np.array([0.3, -0.2, 0.1, 0.0])
        assert gnn.xent_loss(logits, 0, 1 / priors) == pytest.approx(gnn.xent_loss(logits, 0) / 0.97)

    def test_softmax_normalized(self):
        z = np.random.default_rng(0).normal(size=(20, 6)) * 30
        np.testing.assert_allclose(gnn.softmax(z).sum(axis=1), 1.0, atol=1e-9)

    def test_batch_xent_gradient(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(4, 3))
        t = np.array([0, 2, 1, 1])
        w = np.array([1.0, 2.0, 0.5])
        noise = gnn.gumbel_noise(logits.shape, rng)
        _, d = gnn.batch_xent(logits, t, w, noise, tau=2.5)
        h = 1e-6
        for i in range(4):
            for j in range(3):
                up, down = logits.copy(), logits.copy()
                up[i, j] += h
                down[i, j] -= h
                num = (gnn.batch_xent(up, t, w, noise, 2.5)[0] - gnn.batch_xent(down, t, w, noise, 2.5)[0]) / (2 * h)
                assert d[i, j] == pytest.approx(num, abs=1e-8)


class TestGumbel:
    def test_saturated(self):
        rng = np.random.default_rng(0)
        logits = np.array([0.0, 50.0, 0.0])
        hits = sum(gnn.gumbel_sample(logits, 1.0, rng)[0] == 1 for _ in range(10_000))
        assert hits / 10_000 > 0.999

    def test_uniform_four_classes(self):
        rng = np.random.default_rng(1)
        hard, _ = gnn.gumbel_sample(np.zeros((100_000, 4)), 1.0, rng)
        freq = np.bincount(hard, minlength=4) / 100_000
        np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_law_independent_of_tau(self):
        logits = np.array([1.0, -0.5, 0.2])
        target = gnn.softmax(logits)
        for tau in (0.3, 1.0, 5.0):
            hard, _ = gnn.gumbel_sample(np.tile(logits, (100_000, 1)), tau, np.random.default_rng(2))
            freq = np.bincount(hard, minlength=3) / 100_000
            assert 0.5 * np.abs(freq - target).sum() < 0.01

    def test_low_tau_soft_approaches_one_hot(self):
        # tied logits are the hardest case: the mean max component grows as tau
        # falls (about 0.94 at tau 0.1) and passes 0.99 by tau 0.01
        means = []
        for tau in (1.0, 0.1, 0.01):
            _, soft = gnn.gumbel_sample(np.zeros((20_000, 4)), tau, np.random.default_rng(3))
            means.append(soft.max(axis=1).mean())
        assert means[0] < means[1] < means[2]
        assert means[2] > 0.99

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            gnn.gumbel_sample(np.zeros(3), 0.0, np.random.default_rng(0))


class TestAnneal:
    def test_endpoints_and_midpoint(self):
        s = AnnealSchedule(101)
        assert gnn.anneal_tau(0, s) == 5.0
        assert gnn.anneal_tau(100, s) == 1.0
        assert gnn.anneal_tau(50, s) == pytest.approx(3.0)

    def test_clamped(self):
        s = AnnealSchedule(10)
        assert gnn.anneal_tau(-3, s) == 5.0 and gnn.anneal_tau(50, s) == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            AnnealSchedule(10, tau_max=1.0, tau_min=2.0)


class TestAdam:
    def test_zero_gradients(self):
        m = make_model(np.random.default_rng(0))
        before = {k: v.copy() for k, v in m.params.items()}
        opt = OptimizerState(lr=0.01)
        gnn.adam_step(m, gnn.zero_grads(m), opt)
        assert opt.step == 1
        for k in before:
            np.testing.assert_array_equal(m.params[k], before[k])

    def test_first_step_sign(self):
        m = make_model(np.random.default_rng(1))
        before = {k: v.copy() for k, v in m.params.items()}
        grads = {k: np.random.default_rng(2).normal(size=v.shape) for k, v in m.params.items()}
        gnn.adam_step(m, grads, OptimizerState(lr=0.01))
        for k in before:
            np.testing.assert_allclose(m.params[k] - before[k], -0.01 * np.sign(grads[k]), atol=1e-7)

    def test_constant_gradient_step_bounded(self):
        m = make_model(np.random.default_rng(3))
        grads = {k: np.full(v.shape, 0.37) for k, v in m.params.items()}
        opt = OptimizerState(lr=0.002)
        for _ in range(200):
            before = m.params["out_b2"].copy()
            gnn.adam_step(m, grads, opt)
            step = before - m.params["out_b2"]
            assert (step > 0).all() and (step <= 0.002 * (1 + 1e-6)).all()
        np.testing.assert_allclose(step, 0.002, rtol=1e-6)

    def test_shape_mismatch(self):
        m = make_model(np.random.default_rng(4))
        grads = gnn.zero_grads(m)
        grads["out_b2"] = np.zeros(99)
        with pytest.raises(ValueError):
            gnn.adam_step(m, grads, OptimizerState(lr=0.1))
        with pytest.raises(ValueError):
            gnn.adam_step(m, {}, OptimizerState(lr=0.1))


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        m = make_model(np.random.default_rng(0), head="edge", agg="avg", eps=1e-3)
        m.params["out_b2"] += np.pi
        m.save(tmp_path / "m.json", note="x")
        back = GnnModel.load(tmp_path / "m.json")
        assert back.config() == m.config()
        for k in m.params:
            assert back.params[k].tobytes() == m.params[k].tobytes()

    def test_rejects_foreign_document(self):
        with pytest.raises(ValueError):
            GnnModel.from_dict({"format": "other", "version": 1})

    @pytest.mark.parametrize("kw", [{"k_max": 0}, {"epsilon": -1.0}, {"aggregation": "max"},
                                    {"head_kind": "graph"}, {"state_dim": 2}])
    def test_invalid_config(self, kw):
        base = dict(head_kind="node", aggregation="sum", k_max=2, epsilon=0.0, state_dim=6, label_dim=3,
                    edge_dim=3, n_classes=4, hu_state=5, hu_out=4)
        with pytest.raises(ValueError):
            GnnModel(**{**base, **kw})
