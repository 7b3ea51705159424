"""Edge-set container, neighborhood extraction, sampling, persistence."""

import numpy as np
import pytest

from netsel.graph import (
    EdgeSet,
    GraphError,
    NeighborhoodSpec,
    bfs_neighborhood,
    egonet,
    incident_nonedges,
    induced_pairs,
    load_edgeset,
    load_explicit_edges,
    sample_nonedges,
    save_edgeset,
    split_edges_random,
    union_pair_keys,
)


def mk(n, pairs, directed=False, weights=None):
    pairs = list(pairs)
    if weights is None:
        weights = np.ones(len(pairs))
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    return EdgeSet(n_nodes=n, src=src, dst=dst,
                   weights=np.asarray(weights, dtype=np.float64),
                   directed=directed)


def pairs_of(g):
    return set(zip(g.src.tolist(), g.dst.tolist()))


# ----------------------------------------------------------------- EdgeSet


def test_undirected_edges_are_canonicalized():
    g = mk(4, [(2, 0), (3, 1)])
    assert pairs_of(g) == {(0, 2), (1, 3)}
    assert (g.src < g.dst).all()


def test_duplicate_edge_rejected():
    with pytest.raises(GraphError):
        mk(3, [(0, 1), (1, 0)])  # same undirected pair
    with pytest.raises(GraphError):
        mk(3, [(0, 1), (0, 1)], directed=True)


def test_directed_allows_antiparallel():
    g = mk(3, [(0, 1), (1, 0)], directed=True)
    assert g.n_edges == 2


def test_edge_validation():
    with pytest.raises(GraphError):
        mk(3, [(1, 1)])
    with pytest.raises(GraphError):
        mk(3, [(0, 3)])
    with pytest.raises(GraphError):
        mk(3, [(-1, 2)])
    with pytest.raises(GraphError):
        EdgeSet(n_nodes=3, src=np.array([0]), dst=np.array([1, 2]),
                weights=np.ones(1), directed=False)


def test_density():
    assert mk(3, [(0, 1), (0, 2), (1, 2)]).density == pytest.approx(1.0)
    assert mk(3, [(0, 1), (1, 0)], directed=True).density == pytest.approx(2 / 6)


def test_neighbors_on_a_path():
    g = mk(3, [(0, 1), (1, 2)])
    np.testing.assert_array_equal(g.neighbors(1), [0, 2])
    np.testing.assert_array_equal(g.neighbors(0), [1])


def test_neighbors_directed_are_out_neighbors():
    g = mk(3, [(0, 1), (2, 0)], directed=True)
    np.testing.assert_array_equal(g.neighbors(0), [1])
    np.testing.assert_array_equal(g.neighbors(1), [])
    np.testing.assert_array_equal(g.neighbors(2), [0])


def test_isolated_node_has_no_neighbors():
    g = mk(4, [(0, 1)])
    assert len(g.neighbors(3)) == 0
    with pytest.raises(GraphError):
        g.neighbors(4)


def test_degrees_on_star():
    g = mk(4, [(0, 1), (0, 2), (0, 3)])
    np.testing.assert_array_equal(g.degrees(), [3, 1, 1, 1])


def test_undirected_view_merges_antiparallel_with_max():
    g = mk(4, [(0, 1), (1, 0), (2, 3)], directed=True, weights=[2.0, 3.0, 1.0])
    und = g.undirected_view()
    assert not und.directed
    assert pairs_of(und) == {(0, 1), (2, 3)}
    assert dict(zip(pairs_of(und), und.weights))  # no crash
    w = {(u, v): w for u, v, w in zip(und.src, und.dst, und.weights)}
    assert w[(0, 1)] == 3.0


def test_pair_keys_and_has_pair():
    g = mk(5, [(1, 3), (0, 2)])
    keys = g.pair_keys()
    assert list(keys) == sorted(keys)
    assert g.has_pair(3, 1) and g.has_pair(1, 3)
    assert not g.has_pair(0, 1)
    assert not g.has_pair(2, 2)


def test_union_pair_keys():
    a = mk(4, [(0, 1)])
    b = mk(4, [(0, 1), (2, 3)])
    n, keys = union_pair_keys([a, b])
    assert n == 4
    assert len(keys) == 2
    with pytest.raises(GraphError):
        union_pair_keys([a, mk(5, [(0, 1)])])
    with pytest.raises(GraphError):
        union_pair_keys([])


# ------------------------------------------------------------ neighborhoods


def test_bfs_collects_level_by_level():
    g = mk(4, [(0, 1), (1, 2), (2, 3)])
    np.testing.assert_array_equal(bfs_neighborhood(g, 0, k=2), [1, 2])
    np.testing.assert_array_equal(bfs_neighborhood(g, 0, k=10), [1, 2, 3])


def test_bfs_levels_come_out_in_ascending_id_order():
    g = mk(6, [(0, 5), (0, 3)])
    np.testing.assert_array_equal(bfs_neighborhood(g, 0, k=2), [3, 5])


def test_bfs_prefix_property():
    rng = np.random.default_rng(3)
    n = 30
    pairs = {(int(a), int(b)) for a, b in rng.integers(0, n, (80, 2)) if a < b}
    g = mk(n, sorted(pairs))
    full = bfs_neighborhood(g, 0, k=n)
    for k in range(len(full) + 1):
        np.testing.assert_array_equal(bfs_neighborhood(g, 0, k=k), full[:k])


def test_bfs_stays_in_component():
    g = mk(5, [(0, 1), (2, 3)])
    np.testing.assert_array_equal(bfs_neighborhood(g, 0, k=10), [1])
    assert len(bfs_neighborhood(g, 4, k=10)) == 0


def test_egonet_triangle_with_pendant():
    g = mk(4, [(0, 1), (0, 2), (1, 2), (0, 3)])
    nodes, edges, nonedges = egonet(g, 0)
    np.testing.assert_array_equal(nodes, [0, 1, 2, 3])
    assert {tuple(e) for e in edges} == {(0, 1), (0, 2), (0, 3), (1, 2)}
    assert {tuple(e) for e in nonedges} == {(1, 3), (2, 3)}


def test_egonet_of_star_center_lists_leaf_pairs_as_nonedges():
    g = mk(4, [(0, 1), (0, 2), (0, 3)])
    _, edges, nonedges = egonet(g, 0)
    assert {tuple(e) for e in nonedges} == {(1, 2), (1, 3), (2, 3)}
    _, edges, nonedges = egonet(g, 1)
    assert {tuple(e) for e in edges} == {(0, 1)}
    assert len(nonedges) == 0


def test_induced_pairs_on_subset():
    g = mk(6, [(0, 1), (1, 2), (3, 4)])
    edges, nonedges = induced_pairs(g, np.array([0, 1, 4]))
    assert {tuple(e) for e in edges} == {(0, 1)}
    assert {tuple(e) for e in nonedges} == {(0, 4), (1, 4)}


# ------------------------------------------------------------------ splits


def _random_graph(n, m, seed):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < m:
        a, b = rng.integers(0, n, 2)
        if a < b:
            pairs.add((int(a), int(b)))
    return mk(n, sorted(pairs))


def test_split_floor_sizes_with_remainder_to_first():
    g = _random_graph(10, 8, 0)
    parts = split_edges_random(g, (0.5, 0.25, 0.25), seed=1)
    assert [p.n_edges for p in parts] == [4, 2, 2]
    g3 = _random_graph(10, 3, 1)
    parts = split_edges_random(g3, (0.5, 0.25, 0.25), seed=1)
    assert [p.n_edges for p in parts] == [2, 1, 0]


def test_split_is_a_disjoint_cover():
    g = _random_graph(12, 20, 2)
    parts = split_edges_random(g, (0.5, 0.25, 0.25), seed=7)
    seen = [pairs_of(p) for p in parts]
    assert seen[0] | seen[1] | seen[2] == pairs_of(g)
    assert not (seen[0] & seen[1]) and not (seen[0] & seen[2]) \
        and not (seen[1] & seen[2])


def test_split_determinism():
    g = _random_graph(12, 20, 2)
    a = split_edges_random(g, (0.5, 0.25, 0.25), seed=7)
    b = split_edges_random(g, (0.5, 0.25, 0.25), seed=7)
    c = split_edges_random(g, (0.5, 0.25, 0.25), seed=8)
    assert [pairs_of(x) for x in a] == [pairs_of(x) for x in b]
    assert [pairs_of(x) for x in a] != [pairs_of(x) for x in c]


def test_split_fraction_validation():
    g = _random_graph(10, 5, 3)
    with pytest.raises(GraphError):
        split_edges_random(g, (0.5, 0.25), seed=0)
    with pytest.raises(GraphError):
        split_edges_random(g, (1.5, -0.5), seed=0)


# ---------------------------------------------------------------- sampling


def test_sample_nonedges_complete_graph_is_fatal():
    g = mk(3, [(0, 1), (0, 2), (1, 2)])
    with pytest.raises(GraphError):
        sample_nonedges(g, 1, seed=0)


def test_sample_nonedges_empty_graph_enumerates_all_pairs():
    g = mk(4, [])
    got = sample_nonedges(g, 6, seed=0)
    assert {tuple(p) for p in got} == {
        (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)}


def test_sample_nonedges_avoids_every_given_graph():
    a = _random_graph(20, 30, 4)
    b = _random_graph(20, 30, 5)
    got = sample_nonedges([a, b], 40, seed=1)
    assert len(got) == 40
    assert len({tuple(p) for p in got}) == 40
    for u, v in got:
        assert u < v
        assert not a.has_pair(int(u), int(v))
        assert not b.has_pair(int(u), int(v))


def test_sample_nonedges_zero_count_and_determinism():
    g = _random_graph(20, 30, 4)
    assert sample_nonedges(g, 0, seed=0).shape == (0, 2)
    x = sample_nonedges(g, 10, seed=3)
    y = sample_nonedges(g, 10, seed=3)
    np.testing.assert_array_equal(x, y)


def test_sample_nonedges_rejection_path():
    # big enough universe to skip enumeration
    g = mk(3000, [])
    got = sample_nonedges(g, 50, seed=2)
    again = sample_nonedges(g, 50, seed=2)
    np.testing.assert_array_equal(got, again)
    assert len({tuple(p) for p in got}) == 50
    assert (got[:, 0] < got[:, 1]).all()


def test_incident_nonedges_small_complement_returns_all():
    g = mk(4, [(0, 1)])
    _, keys = union_pair_keys([g])
    got = incident_nonedges(4, keys, 0, count=5, seed=0)
    np.testing.assert_array_equal(got, [2, 3])


def test_incident_nonedges_sampled_subset():
    g = mk(50, [(0, 1)])
    _, keys = union_pair_keys([g])
    got = incident_nonedges(50, keys, 0, count=10, seed=9)
    assert len(got) == 10
    assert 0 not in got and 1 not in got
    np.testing.assert_array_equal(
        got, incident_nonedges(50, keys, 0, count=10, seed=9))


def test_incident_nonedges_empty_union():
    got = incident_nonedges(5, np.empty(0, dtype=np.int64), 2, count=10, seed=0)
    np.testing.assert_array_equal(got, [0, 1, 3, 4])


# -------------------------------------------------------------- persistence


def test_edgeset_roundtrip(tmp_path):
    g = mk(6, [(0, 1), (2, 0), (4, 5)], directed=True,
           weights=[0.5, 2.0, 1.25])
    g.provenance["model"] = "KNN"
    save_edgeset(g, tmp_path / "g.tsv")
    back = load_edgeset(tmp_path / "g.tsv")
    assert back.directed == g.directed
    assert back.n_nodes == g.n_nodes
    assert pairs_of(back) == pairs_of(g)
    np.testing.assert_allclose(back.weights, g.weights)
    assert back.provenance["model"] == "KNN"


def test_load_edgeset_requires_header(tmp_path):
    (tmp_path / "bad.tsv").write_text("0\t1\t1.0\n")
    with pytest.raises(GraphError):
        load_edgeset(tmp_path / "bad.tsv")


def test_load_explicit_edges(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("0 1\n1 0\n2 3\n")
    g = load_explicit_edges(p, 5)
    assert pairs_of(g) == {(0, 1), (2, 3)}
    assert g.provenance["duplicates_dropped"] == 1


def test_load_explicit_edges_drops_self_loops(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("4 4\n0 2\n")
    g = load_explicit_edges(p, 5)
    assert pairs_of(g) == {(0, 2)}
    assert g.provenance["self_loops_dropped"] == 1


def test_load_explicit_edges_validation(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("0 9\n")
    with pytest.raises(GraphError):
        load_explicit_edges(p, 5)
    p.write_text("")
    assert load_explicit_edges(p, 5).n_edges == 0
    with pytest.raises(GraphError):
        load_explicit_edges(tmp_path / "missing.txt", 5)


# ------------------------------------------------------- neighborhood specs


def test_neighborhood_key_roundtrip():
    for text in ("local-adjacency", "local-bfs", "local-bfs:50", "community",
                 "ensemble:degree", "ensemble:attr-sum", "ensemble:random",
                 "global", "global:100"):
        spec = NeighborhoodSpec.parse(text)
        assert NeighborhoodSpec.parse(spec.key()) == spec
    assert NeighborhoodSpec.parse("local-bfs:50").bfs_k == 50
    assert NeighborhoodSpec.parse("global:100").global_sample == 100
    assert NeighborhoodSpec.parse("ensemble").ensemble_order == "degree"
    # defaults are omitted from the key
    assert NeighborhoodSpec("local-bfs").key() == "local-bfs"
    assert NeighborhoodSpec("global").key() == "global"
    assert NeighborhoodSpec("ensemble").key() == "ensemble:degree"


def test_neighborhood_validation():
    with pytest.raises(GraphError):
        NeighborhoodSpec("nearby")
    with pytest.raises(GraphError):
        NeighborhoodSpec("local-bfs", bfs_k=0)
    with pytest.raises(GraphError):
        NeighborhoodSpec("ensemble", ensemble_k=2, ensemble_knn=3)
    with pytest.raises(GraphError):
        NeighborhoodSpec("ensemble", ensemble_order="best")
    with pytest.raises(GraphError):
        NeighborhoodSpec("global", global_sample=0)
