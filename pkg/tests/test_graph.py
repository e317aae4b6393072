import numpy as np
import pytest

from refnet.graph import GraphError, Network, format_number


def test_single_edge_degrees():
    net = Network(2).add_edge(0, 1, 1.0)
    assert net.degree(0) == 1 and net.degree(1) == 1


def test_repeated_edge_accumulates_weight():
    net = Network(2)
    net.add_edge(0, 1, 1.0)
    net.add_edge(0, 1, 1.0)
    assert net.edges() == [(0, 1, 2.0)]
    assert net.edge_count == 1


def test_self_loop_rejected():
    with pytest.raises(GraphError, match="self-loop"):
        Network(2).add_edge(0, 0, 1.0)


@pytest.mark.parametrize("u,v", [(0, 5), (-1, 0), (1.5, 0), (True, 0)])
def test_invalid_node_rejected(u, v):
    with pytest.raises(GraphError):
        Network(3).add_edge(u, v)


@pytest.mark.parametrize("w", [0.0, -1.0, float("nan"), float("inf")])
def test_nonpositive_weight_rejected(w):
    with pytest.raises(GraphError, match="weight"):
        Network(2).add_edge(0, 1, w)


def test_star_neighbours_sorted():
    net = Network(4)
    for leaf in (3, 1, 2):
        net.add_edge(0, leaf, 2.0)
    assert net.neighbors(0) == [(1, 2.0), (2, 2.0), (3, 2.0)]


def test_isolated_node_has_no_neighbours():
    net = Network(3).add_edge(0, 1)
    assert net.neighbors(2) == []


def test_insertion_order_sorted():
    net = Network(3)
    net.add_edge(0, 2)
    net.add_edge(0, 1)
    assert [v for v, _ in net.neighbors(0)] == [1, 2]


def test_undirected_mirror_has_equal_weight():
    net = Network(3).add_edge(2, 0, 1.5)
    assert net.weight(0, 2) == net.weight(2, 0) == 1.5


def test_directed_edge_one_way():
    net = Network(2, directed=True).add_edge(0, 1)
    assert net.has_edge(0, 1) and not net.has_edge(1, 0)


def test_bipartite_roles_enforced():
    net = Network(3, directed=True, roles=["PC", "SC", "PC"])
    net.add_edge(0, 1)
    with pytest.raises(GraphError, match="bipartite"):
        net.add_edge(0, 2)
    with pytest.raises(GraphError, match="bipartite"):
        net.add_edge(1, 0)


def test_unknown_role_tag_rejected():
    with pytest.raises(GraphError, match="role"):
        Network(2, roles=["PC", "XX"])


def test_same_multiset_any_order_compares_equal():
    edges = [(0, 1, 1.0), (1, 2, 2.0), (0, 3, 1.0), (0, 1, 0.5)]
    a = Network.from_edges(4, edges)
    b = Network.from_edges(4, list(reversed(edges)))
    assert a == b


def test_as_undirected_merges_reciprocal_edges():
    net = Network(2, directed=True)
    net.add_edge(0, 1, 1.0)
    net.add_edge(1, 0, 2.0)
    und = net.as_undirected()
    assert not und.directed
    assert und.edges() == [(0, 1, 3.0)]


def test_as_undirected_cache_reset_on_mutation():
    net = Network(3, directed=True)
    net.add_edge(0, 1)
    first = net.as_undirected()
    net.add_edge(1, 2)
    assert net.as_undirected() is not first
    assert net.as_undirected().edge_count == 2


def test_without_edges_removes_both_directions_when_undirected():
    net = Network.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    out = net.without_edges([(1, 0)])
    assert out.edges() == [(1, 2, 1.0)]
    assert net.edge_count == 2


def test_csr_matches_adjacency():
    net = Network.from_edges(3, [(0, 2, 2.0), (0, 1, 1.0)])
    indptr, indices, w = net.csr()
    assert indptr.tolist() == [0, 2, 3, 4]
    assert indices.tolist() == [1, 2, 0, 0]
    assert w.tolist() == [1.0, 2.0, 1.0, 2.0]
    dense = net.adjacency_matrix(weighted=False).toarray()
    assert np.array_equal(dense, dense.T)


def test_edges_csv_layout():
    net = Network.from_edges(3, [(0, 1, 2.0), (1, 2, 0.25)])
    assert net.edges_csv() == "source_id,target_id,weight\n0,1,2\n1,2,0.25\n"


def test_nodes_csv_layout():
    net = Network(2, roles=["PC", "SC"], external_ids=["a", "b"])
    net.set_attribute("age", [40.0, 51.5])
    assert net.nodes_csv() == "node_id,external_id,role,age\n0,a,PC,40\n1,b,SC,51.5\n"


def test_attribute_length_checked():
    with pytest.raises(GraphError):
        Network(2).set_attribute("x", [1.0])


def test_format_number_round_trips():
    for x in (0.1, 1 / 3, 2.0, -7.0, 1e-300, 123456789.125):
        assert float(format_number(x)) == x
    assert format_number(3.0) == "3"
