import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miqcqp.generators import six_var_instance
from miqcqp.model import MiqcqpInstance, QuadraticForm
from miqcqp.sparsity import (CsGraph, build_cs_graph, chordal_extension, clique_tree, decompose,
                             is_chordal, maximal_cliques, report, term_components)

SIX_VAR_EDGES = {(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (2, 5), (4, 5), (1, 4)}


def _graph(n, edges):
    return CsGraph(n, frozenset(edges))


@st.composite
def graphs(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return _graph(n, [p for p, m in zip(pairs, mask) if m])


class TestCsGraph:
    def test_six_var_edges(self):
        assert set(build_cs_graph(six_var_instance()).edges) == SIX_VAR_EDGES

    def test_diagonal_only(self):
        inst = MiqcqpInstance.build(2, 0, QuadraticForm(quad={(1, 1): 1.0}))
        g = build_cs_graph(inst)
        assert g.n_vertices == 2 and not g.edges

    def test_dense_three(self):
        inst = MiqcqpInstance.build(3, 0, QuadraticForm.from_matrix(np.ones((3, 3))))
        assert set(build_cs_graph(inst).edges) == {(0, 1), (0, 2), (1, 2)}

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            _graph(2, [(1, 1)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            _graph(2, [(0, 2)])


class TestChordal:
    def test_six_var_not_chordal(self):
        res = is_chordal(SIX_VAR_EDGES, 6)
        assert not res
        assert tuple(sorted(res.cycle)) == (1, 2, 4, 5)

    def test_six_var_extension_chordal(self):
        dec = chordal_extension(build_cs_graph(six_var_instance()))
        assert len(dec.fill_edges) == 1
        assert dec.fill_edges <= {(2, 4), (1, 5)}
        assert is_chordal(dec.extended_edges, 6)

    def test_empty_graph(self):
        assert is_chordal([], 0)
        assert is_chordal([], 3)

    def test_tree_no_fill(self):
        edges = [(0, 1), (1, 2), (1, 3), (3, 4)]
        for h in ("min_degree", "min_fill"):
            assert not chordal_extension(_graph(5, edges), h).fill_edges

    def test_k4_no_fill(self):
        edges = list(itertools.combinations(range(4), 2))
        assert not chordal_extension(_graph(4, edges)).fill_edges

    def test_unknown_heuristic(self):
        with pytest.raises(ValueError):
            chordal_extension(_graph(2, []), "best")


class TestCliques:
    def test_six_var_cliques(self):
        dec = decompose(build_cs_graph(six_var_instance()))
        assert sorted(dec.clique_sizes()) == [2, 4, 4]
        assert len(dec.tree_edges) == 2
        four = [set(c) for c in dec.cliques if len(c) == 4]
        seps = {tuple(sorted(s)) for _, _, s in dec.tree_edges}
        assert tuple(sorted(four[0] & four[1])) in seps
        assert len(four[0] & four[1]) == 3 and 0 in four[0] & four[1]

    def test_path(self):
        dec = decompose(_graph(3, [(0, 1), (1, 2)]))
        assert sorted(dec.cliques) == [(0, 1), (1, 2)]

    def test_k4(self):
        dec = decompose(_graph(4, list(itertools.combinations(range(4), 2))))
        assert dec.cliques == ((0, 1, 2, 3),)

    def test_single_clique_no_tree(self):
        assert decompose(_graph(3, [(0, 1), (1, 2), (0, 2)])).tree_edges == ()

    def test_disjoint_cliques_no_tree(self):
        dec = decompose(_graph(4, [(0, 1), (2, 3)]))
        assert len(dec.cliques) == 2 and dec.tree_edges == ()

    def test_staged_api(self):
        g = build_cs_graph(six_var_instance())
        staged = clique_tree(maximal_cliques(chordal_extension(g)))
        assert staged == decompose(g)

    def test_report_lists_fill(self):
        text = report(decompose(build_cs_graph(six_var_instance())))
        assert "fill edges (1)" in text and "blocks: 3" in text and "max block size: 4" in text


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.sampled_from(["min_degree", "min_fill"]))
    def test_extension_chordal_and_superset(self, g, h):
        dec = chordal_extension(g, h)
        assert g.edges <= dec.extended_edges
        assert is_chordal(dec.extended_edges, g.n_vertices)
        ref = nx.Graph()
        ref.add_nodes_from(range(g.n_vertices))
        ref.add_edges_from(dec.extended_edges)
        assert nx.is_chordal(ref)

    @settings(max_examples=60, deadline=None)
    @given(graphs(), st.sampled_from(["min_degree", "min_fill"]))
    def test_chordal_input_no_fill(self, g, h):
        ref = nx.Graph()
        ref.add_nodes_from(range(g.n_vertices))
        ref.add_edges_from(g.edges)
        if nx.is_chordal(ref):
            assert not chordal_extension(g, h).fill_edges

    @settings(max_examples=60, deadline=None)
    @given(graphs())
    def test_cliques_maximal_and_cover(self, g):
        dec = decompose(g)
        ext = dec.extended_edges
        for c in dec.cliques:
            assert all((a, b) in ext for a, b in itertools.combinations(c, 2))
        sets = [set(c) for c in dec.cliques]
        for i, a in enumerate(sets):
            assert not any(i != j and a <= b for j, b in enumerate(sets))
        for a, b in g.edges:
            assert any(a in s and b in s for s in sets)
        ref = nx.Graph()
        ref.add_nodes_from(range(g.n_vertices))
        ref.add_edges_from(ext)
        assert sorted(map(sorted, sets)) == sorted(sorted(c) for c in nx.find_cliques(ref))

    @settings(max_examples=60, deadline=None)
    @given(graphs(max_n=30))
    def test_running_intersection(self, g):
        dec = decompose(g)
        tree = nx.Graph()
        tree.add_nodes_from(range(len(dec.cliques)))
        tree.add_edges_from((a, b) for a, b, _ in dec.tree_edges)
        assert nx.is_forest(tree)
        for v, owners in enumerate(dec.containing()):
            if owners:
                assert nx.is_connected(tree.subgraph(owners))
        for a, b, sep in dec.tree_edges:
            assert set(sep) == set(dec.cliques[a]) & set(dec.cliques[b])

    @settings(max_examples=30, deadline=None)
    @given(graphs())
    def test_deterministic(self, g):
        assert decompose(g) == decompose(g)

    def test_peo_certificate(self):
        dec = decompose(build_cs_graph(six_var_instance()))
        res = is_chordal(dec.extended_edges, 6)
        assert sorted(res.ordering) == list(range(6))


def test_term_components_split():
    assert term_components((0, 1, 2, 3), [(0, 1), (2, 3)]) == [(0, 1), (2, 3)]
    assert term_components((0, 1, 2), [(0, 1), (1, 2)]) == [(0, 1, 2)]
