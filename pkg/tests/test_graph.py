import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adathresh.errors import AdaThreshError, ParseError
from adathresh.graph import (
    Clustering,
    Graph,
    contiguous_clusters,
    from_edge_list,
    induced_subgraph,
    kth_power_cycle,
    load_clusters,
    non_isolated_subset,
    sbm,
    sbm_blocks,
)


def check_invariants(g: Graph):
    adj = g.adjacency
    for i, nb in enumerate(adj):
        assert i not in nb
        assert nb == sorted(set(nb))
        for j in nb:
            assert i in adj[j]
    assert list(g.degrees) == [len(nb) for nb in adj]
    assert g.d_max == max((len(nb) for nb in adj), default=0)


def test_five_cycle():
    g = kth_power_cycle(5, 1)
    assert g.n == 5 and set(g.degrees) == {2}
    check_invariants(g)


def test_power_cycle_1000_degree_4():
    g = kth_power_cycle(1000, 2)
    assert np.all(g.degrees == 4) and g.num_edges == 2000


def test_power_cycle_neighbours():
    assert kth_power_cycle(6, 2).neighbors(0).tolist() == [1, 2, 4, 5]


@pytest.mark.parametrize("n,k", [(4, 2), (2, 1), (5, 0)])
def test_power_cycle_rejects_collisions(n, k):
    with pytest.raises(AdaThreshError):
        kth_power_cycle(n, k)


@given(st.integers(1, 4).flatmap(lambda k: st.tuples(st.just(k), st.integers(2 * k + 1, 40))))
def test_power_cycle_regular(kn):
    k, n = kn
    g = kth_power_cycle(n, k)
    assert len(np.unique(g.degrees)) == 1 and g.degrees[0] == 2 * k
    check_invariants(g)


def test_ball():
    g = kth_power_cycle(20, 2)
    assert g.ball(0, 1).tolist() == [0, 1, 2, 18, 19]
    assert g.ball(0, 2).tolist() == [0, 1, 2, 3, 4, 16, 17, 18, 19]


def test_sbm_trivial_cases():
    g = sbm([3], 1.0, 0.0, seed=11)
    assert g.num_edges == 3
    e = sbm([2, 2], 0.0, 0.0, seed=11)
    assert e.num_edges == 0 and non_isolated_subset(e).tolist() == []


def test_sbm_edge_count_within_four_sd():
    sizes = [8] * 25
    g = sbm(sizes, 0.5, 0.01, seed=7)
    n = 200
    intra = 25 * 28
    inter = n * (n - 1) // 2 - intra
    mean = intra * 0.5 + inter * 0.01
    sd = np.sqrt(intra * 0.25 + inter * 0.01 * 0.99)
    assert abs(g.num_edges - mean) <= 4 * sd
    check_invariants(g)


def test_sbm_reproducible():
    assert sbm([10, 10], 0.4, 0.1, 3) == sbm([10, 10], 0.4, 0.1, 3)
    assert sbm([10, 10], 0.4, 0.1, 3) != sbm([10, 10], 0.4, 0.1, 4)


def test_sbm_respects_blocks():
    g = sbm([5, 5], 1.0, 0.0, seed=0)
    blocks = sbm_blocks([5, 5])
    for u, v in g.edges():
        assert blocks[u] == blocks[v]


def test_sbm_validates_probabilities():
    with pytest.raises(AdaThreshError):
        sbm([3], 0.1, 0.2, 0)


def test_edge_list_symmetrised():
    g = from_edge_list("0 1\n1 0\n")
    assert g.n == 2 and g.num_edges == 1


def test_edge_list_compaction():
    g = from_edge_list("# c\n5 9\n9 7\n")
    assert g.n == 3 and g.num_edges == 2
    assert g.ids == (5, 9, 7)
    assert g.neighbors(1).tolist() == [0, 2]


def test_edge_list_self_loop_dropped_with_warning():
    with pytest.warns(UserWarning, match="self-loop"):
        g = from_edge_list("0 0\n0 1\n")
    assert g.n == 2 and g.num_edges == 1 and g.self_loops_dropped == 1


def test_edge_list_tabs_and_blank_lines():
    g = from_edge_list("1\t2\n\n2\t3\n")
    assert g.num_edges == 2


@pytest.mark.parametrize("text,line", [("0 1\n1\n", 2), ("# x\n0 1\na b\n", 3), ("0 1 2\n", 1)])
def test_edge_list_parse_errors(text, line):
    with pytest.raises(ParseError, match=f"line {line}") as info:
        from_edge_list(text)
    assert info.value.line == line


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=40))
def test_edge_list_round_trip(pairs):
    text = "".join(f"{u} {v}\n" for u, v in pairs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = from_edge_list(text)
        h = from_edge_list(g.to_edge_list())
    check_invariants(g)
    # a node seen only on a self-loop line has no edge to write back out
    if g.degrees.min(initial=1) > 0:
        assert g == h
    else:
        assert induced_subgraph(g, non_isolated_subset(g)) == h


def test_generated_graph_round_trip():
    g = sbm([6, 6, 6], 0.5, 0.1, seed=3)
    g = induced_subgraph(g, non_isolated_subset(g))
    assert from_edge_list(g.to_edge_list()) == g
    assert from_edge_list(kth_power_cycle(9, 2).to_edge_list()) == kth_power_cycle(9, 2)


def test_non_isolated_subset():
    assert non_isolated_subset(Graph.from_edges(3, [(0, 1)])).tolist() == [0, 1]


def test_induced_subgraph_keeps_labels():
    g = from_edge_list("10 11\n11 12\n12 13\n")
    s = induced_subgraph(g, [1, 2, 3])
    assert s.ids == (11, 12, 13) and s.num_edges == 2


def test_contiguous_clusters():
    g = kth_power_cycle(10, 1)
    c = contiguous_clusters(g, 5)
    assert c.k == 2 and c.cluster_of.tolist() == [0] * 5 + [1] * 5
    with pytest.raises(AdaThreshError):
        contiguous_clusters(g, 3)


def test_contiguous_clusters_connected_on_big_cycle():
    g = kth_power_cycle(1000, 2)
    c = contiguous_clusters(g, 5)
    assert c.k == 200
    for members in c.clusters[:10]:
        sub = induced_subgraph(g, members)
        assert len(sub.ball(0, 5)) == 5


def test_s_max_15_node_ring():
    # each block of 5 on the k=2 ring has 3 edges leaving at each end
    g = kth_power_cycle(15, 2)
    assert contiguous_clusters(g, 5).s_max == 1 + 2 * (1 + 2)


def test_load_clusters():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert load_clusters("0 0\n1 0\n2 0\n", g).s_max == 1
    c = load_clusters("0 0\n1 1\n2 2\n", g)
    assert c.k == 3 and c.s_max == 1 + 2


def test_load_clusters_sbm_blocks():
    g = sbm([8] * 25, 0.5, 0.01, 7)
    text = "".join(f"{i} {b}\n" for i, b in enumerate(sbm_blocks([8] * 25)))
    assert load_clusters(text, g).k == 25


@pytest.mark.parametrize("text", ["0 0\n1 0\n", "0 0\n0 1\n1 0\n2 0\n", "0 0\n1 0\n2 0\n9 0\n"])
def test_load_clusters_errors(text):
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    with pytest.raises(ParseError):
        load_clusters(text, g)


def test_load_clusters_uses_external_ids():
    g = from_edge_list("7 8\n8 9\n")
    c = load_clusters("9 1\n8 1\n7 0\n", g)
    assert c.cluster_of.tolist() == [0, 1, 1]


@given(st.lists(st.integers(0, 4), min_size=6, max_size=6))
def test_clustering_partition(labels):
    g = kth_power_cycle(6, 1)
    c = Clustering.from_labels(g, labels)
    assert sum(len(m) for m in c.clusters) == g.n
    assert sorted(np.concatenate(c.clusters).tolist()) == list(range(6))
    assert set(c.cluster_of.tolist()) == set(range(c.k))
    assert c.s_max >= 1
