import numpy as np
import pytest

from seqmolgen import ingest, sequencer
from seqmolgen.graph import MolecularGraph, TypePriority, betweenness, is_isomorphic
from seqmolgen.sequencer import DISCONNECTED, STOP, decompose, make_batches, parents, reorder

from helpers import methane, water

CAND = ingest.QM9.candidate_edge


def ordered(g, seed=0):
    prio = TypePriority.from_scores([0.0, 0.382, 0.246, 0.115, 0.0])
    return reorder(g, prio, np.random.default_rng(seed))


class TestReorder:
    def test_identity_on_ordered_path(self):
        path = MolecularGraph((1, 1, 1), ((0, 1, 0), (1, 2, 0)))
        assert reorder(path, TypePriority.identity(5), np.random.default_rng(0)) == path

    def test_isomorphic(self, surrogate):
        for g in surrogate[:100]:
            assert is_isomorphic(ordered(g), g)

    def test_golden(self, golden):
        g = ingest.graph_from_record(golden["ethanol"])
        assert ingest.graph_record(ordered(g, seed=3)) == golden["ethanol_reordered_seed3"]

    def test_start_vertex_kept(self, surrogate):
        for g in surrogate[:20]:
            assert ordered(g).vertex_types[0] == g.vertex_types[0]


class TestPriority:
    def test_h_c_h(self):
        hch = MolecularGraph((0, 1, 0), ((0, 1, 0), (1, 2, 0)))
        prio = sequencer.type_priority_from_centrality([hch], 5)
        assert prio.rank(0) < prio.rank(1)

    def test_single_graph_means(self, surrogate):
        g = surrogate[0]
        prio = sequencer.type_priority_from_centrality([g], 5)
        b = betweenness(g)
        for t in set(g.vertex_types):
            sel = [v for v in range(g.n_vertices) if g.vertex_types[v] == t]
            assert prio.centrality[t] == pytest.approx(b[sel].mean())

    def test_absent_types_zero(self):
        prio = sequencer.type_priority_from_centrality([MolecularGraph((1, 1, 1), ((0, 1, 0), (1, 2, 0)))], 5)
        assert prio.centrality[4] == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            sequencer.type_priority_from_centrality([], 5)

    def test_surrogate_ranks_like_qm9(self, surrogate):
        # hydrogens and fluorines are leaves; carbon is the most central type
        prio = sequencer.type_priority_from_centrality(surrogate[:1000], 5)
        c = prio.centrality
        assert c[0] == 0.0 and c[4] == 0.0 and c[3] < c[2] < c[1]


class TestDecompose:
    def test_water(self):
        steps = decompose(water(), CAND)
        assert len(steps.m1) == 5 and len(steps.m2) == 2 and len(steps.m3) == 1

    def test_single_vertex(self):
        steps = decompose(MolecularGraph((1,), ()), CAND)
        assert [e.supervision for e in steps.m1] == [STOP]
        assert steps.m2 == [] and steps.m3 == []

    def test_methane_by_hand(self):
        steps = decompose(methane(), CAND)
        # C expands four H (four add decisions then stop), each H then stops
        assert [e.supervision for e in steps.m1] == [1, 1, 1, 1, STOP, STOP, STOP, STOP, STOP]
        assert [e.focus for e in steps.m1] == [0, 0, 0, 0, 0, 1, 2, 3, 4]
        assert [e.graph.n_vertices for e in steps.m1] == [1, 2, 3, 4, 5, 5, 5, 5, 5]
        assert [e.supervision for e in steps.m2] == [0, 0, 0, 0]
        assert [len(e.candidate_edges) for e in steps.m3] == [1, 2, 3]
        assert all(c == DISCONNECTED for e in steps.m3 for _, _, c in e.candidate_edges)

    def test_m2_snapshot_has_candidate_edge(self):
        ex = decompose(water(), CAND).m2[1]
        assert ex.target_vertex == 2 and ex.graph.edge_type(0, 2) == CAND
        assert ex.graph.edge_type(0, 1) == 0

    def test_m3_candidates(self):
        ring = ordered(ingest.parse_smiles("C1CC1", ingest.QM9))
        steps = decompose(ring, CAND)
        for ex in steps.m3:
            j = ex.target_vertex
            assert {k for k, _, _ in ex.candidate_edges} == set(range(j)) - {ex.focus}
            for k, jj, c in ex.candidate_edges:
                assert jj == j and ex.graph.edge_type(k, j) == CAND
                t = ring.edge_type(k, j)
                assert c == (DISCONNECTED if t is None else 1 + t)
        assert sum(c != DISCONNECTED for ex in steps.m3 for _, _, c in ex.candidate_edges) == 1

    def test_sizes_on_corpus(self, surrogate):
        for g in surrogate[:300]:
            h = ordered(g)
            s = decompose(h, CAND)
            n = h.n_vertices
            assert len(s.m1) == 2 * n - 1 and len(s.m2) == n - 1
            assert len(s.m3) == max(n - 2, 0)
            for ex in s.m1 + s.m2 + s.m3:
                assert ex.graph.is_connected()

    def test_unordered_input_rejected(self):
        g = MolecularGraph((1, 1, 1), ((0, 2, 0), (1, 2, 0)))  # vertex 1 has no earlier neighbor
        with pytest.raises(ValueError):
            decompose(g, CAND)

    def test_parents(self):
        assert parents(methane()) == [-1, 0, 0, 0, 0]

    def test_deterministic(self, surrogate):
        g = surrogate[5]
        assert decompose(ordered(g, 1), CAND) == decompose(ordered(g, 1), CAND)


class TestBatches:
    def test_six_into_two(self):
        ts = sequencer.build_training_set([water()] * 6, CAND)
        batches = make_batches(ts, 2, np.random.default_rng(0))
        assert [len(b) for b in batches] == [3, 3]
        assert sorted(sum(batches, [])) == list(range(6))

    def test_single_batch(self):
        ts = sequencer.build_training_set([water()] * 4, CAND)
        assert make_batches(ts, 1, np.random.default_rng(0)) == [[0, 1, 2, 3]]

    def test_examples_follow_molecule(self, surrogate):
        graphs = [ordered(g) for g in surrogate[:30]]
        ts = sequencer.build_training_set(graphs, CAND)
        make_batches(ts, 4, np.random.default_rng(1))
        total = sum(len(ts.examples("m1", b)) for b in ts.batches)
        assert total == len(ts.examples("m1"))

    def test_too_many_batches(self):
        ts = sequencer.build_training_set([water()] * 2, CAND)
        with pytest.raises(ValueError):
            make_batches(ts, 3, np.random.default_rng(0))
