import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gscl import oracles
from gscl.graph import (Graph, GraphFormatError, bfs_hop_partition, build_partitions,
                        complete_tree, erdos_renyi, generate_sbm, load_graph, load_graph_binary,
                        parse_edge_list, resample_beyond, save_graph_binary, write_graph_text)
from gscl.metrics import homophily_metric


def _csv(rows, header):
    return io.StringIO("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def _assert_csr_invariants(g):
    off, tgt = g.csr_offsets, g.csr_targets
    assert off[0] == 0 and off[-1] == len(tgt)
    assert np.all(np.diff(off) >= 0)
    pairs = set(map(tuple, g.edge_array(directed=True)))
    assert all((v, u) in pairs for u, v in pairs)
    assert all(u != v for u, v in pairs)
    for u in range(g.num_nodes):
        row = g.neighbors(u)
        assert np.all(np.diff(row) > 0)


def test_single_edge_is_symmetrised():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)))
    assert list(g.degrees()) == [1, 1]
    _assert_csr_invariants(g)


def test_duplicates_and_self_loops_collapse():
    g = Graph.from_edges(2, [(0, 1), (1, 0), (1, 1)], np.zeros((2, 1)))
    assert g.num_edges == 2
    assert g.edge_array().tolist() == [[0, 1]]


def test_load_graph_from_streams():
    edges = io.StringIO("# toy\n0 1\n1 2  # trailing comment\n\n2 0\n")
    feats = _csv([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], ["a", "b"])
    labels = _csv([[0, 1], [1, 0], [2, 1]], ["node_id", "class_id"])
    g = load_graph(edges, feats, labels)
    assert g.num_nodes == 3 and g.num_edges == 6
    assert g.labels.tolist() == [1, 0, 1]
    _assert_csr_invariants(g)


def test_out_of_range_node_rejected():
    feats = _csv([[1.0], [2.0]], ["x"])
    with pytest.raises(GraphFormatError, match="outside"):
        load_graph(io.StringIO("0 5\n"), feats)


def test_malformed_line_reports_line_number():
    with pytest.raises(GraphFormatError, match="line 3"):
        parse_edge_list("0 1\n1 2\n1 two\n")
    with pytest.raises(GraphFormatError, match="line 1"):
        parse_edge_list("0 1 2\n")


def test_feature_row_mismatch_rejected():
    with pytest.raises(GraphFormatError):
        Graph.from_edges(3, [(0, 1)], np.zeros((2, 1)))


def test_graph_arrays_are_read_only():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        g.csr_targets[0] = 1


def test_text_roundtrip(tmp_path):
    g = generate_sbm([6, 7], 0.6, 0.1, feature_dim=3, seed=4)
    write_graph_text(g, tmp_path / "g.edges", tmp_path / "f.csv", tmp_path / "y.csv")
    g2 = load_graph(tmp_path / "g.edges", tmp_path / "f.csv", tmp_path / "y.csv")
    write_graph_text(g2, tmp_path / "g2.edges", tmp_path / "f2.csv", tmp_path / "y2.csv")
    g3 = load_graph(tmp_path / "g2.edges", tmp_path / "f2.csv", tmp_path / "y2.csv")
    for a in (g2, g3):
        assert np.array_equal(a.csr_offsets, g.csr_offsets)
        assert np.array_equal(a.csr_targets, g.csr_targets)
        assert np.array_equal(a.labels, g.labels)
        assert np.array_equal(a.features, g.features)


def test_binary_roundtrip(tmp_path):
    g = generate_sbm([5, 5], 0.5, 0.1, feature_dim=4, seed=1)
    save_graph_binary(g, tmp_path / "g.bin")
    assert (tmp_path / "g.bin").read_bytes()[:5] == b"GSCL1"
    g2 = load_graph_binary(tmp_path / "g.bin")
    assert np.array_equal(g2.csr_offsets, g.csr_offsets)
    assert np.array_equal(g2.csr_targets, g.csr_targets)
    assert np.array_equal(g2.labels, g.labels)
    assert np.allclose(g2.features, g.features.astype(np.float32))


def test_binary_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(GraphFormatError):
        load_graph_binary(tmp_path / "x.bin")


# hop partitions -------------------------------------------------------------


def test_path_partition(path_graph):
    part = bfs_hop_partition(path_graph, 0, 2)
    assert part.hop(1).tolist() == [1]
    assert part.hop(2).tolist() == [2]
    assert set(part.beyond_sample.tolist()) <= {3}


def test_isolated_anchor_partition():
    g = Graph.from_edges(5, [(1, 2), (3, 4)], np.zeros((5, 1)))
    part = bfs_hop_partition(g, 0, 2)
    assert part.hop(1).size == 0 and part.hop(2).size == 0
    assert set(part.beyond_sample.tolist()) <= {1, 2, 3, 4}


def test_anchor_out_of_range(path_graph):
    with pytest.raises(IndexError):
        bfs_hop_partition(path_graph, 9, 2)


@pytest.mark.parametrize("seed", range(3))
def test_partition_matches_floyd_warshall(seed):
    g = erdos_renyi(50, 0.1, seed=seed)
    dist = oracles.floyd_warshall(g)
    for anchor in range(g.num_nodes):
        part = bfs_hop_partition(g, anchor, 3, negative_cap=None)
        hops, beyond = oracles.hop_sets(dist[anchor], 3)
        for h in range(3):
            assert part.hop_sets[h].tolist() == hops[h]
        assert part.beyond_sample.tolist() == beyond


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), p=st.floats(0.0, 0.4), k=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_partition_covers_every_node_once(n, p, k, seed):
    g = erdos_renyi(n, p, seed=seed)
    dist = oracles.floyd_warshall(g)
    anchor = seed % n
    part = bfs_hop_partition(g, anchor, k, negative_cap=None)
    pieces = [np.array([anchor])] + list(part.hop_sets) + [part.beyond_sample]
    allnodes = np.concatenate(pieces)
    assert sorted(allnodes.tolist()) == list(range(n))
    for h, hs in enumerate(part.hop_sets, start=1):
        assert np.all(dist[anchor, hs] == h)


def test_beyond_cap_is_uniform_subset():
    g = erdos_renyi(200, 0.01, seed=0)
    rng = np.random.default_rng(5)
    part = bfs_hop_partition(g, 0, 1, negative_cap=20, rng=rng)
    dist = oracles.floyd_warshall(g)
    assert part.beyond_sample.size == 20
    assert np.all(dist[0, part.beyond_sample] > 1)
    again = resample_beyond(g, part, 20, rng)
    assert np.all(dist[0, again.beyond_sample] > 1)
    assert again.hop_sets is part.hop_sets


def test_build_partitions_anchor_subset():
    g = complete_tree(2, 3)
    parts = build_partitions(g, 2, anchors=[0, 3], negative_cap=None)
    assert [p.anchor for p in parts] == [0, 3]
    assert parts[0].sizes().tolist() == [2, 4, 8]


# SBM ------------------------------------------------------------------------


def test_sbm_no_cross_edges_is_fully_homophilous():
    g = generate_sbm([3, 3], 1.0, 0.0, feature_dim=2, seed=0)
    assert g.num_edges == 12  # two triangles
    assert homophily_metric(g) == 1.0


def test_sbm_only_cross_edges_is_bipartite():
    g = generate_sbm([2, 2], 0.0, 1.0, feature_dim=2, seed=0)
    assert sorted(map(tuple, g.edge_array().tolist())) == [(0, 2), (0, 3), (1, 2), (1, 3)]
    assert homophily_metric(g) == 0.0


def test_sbm_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        generate_sbm([3, 3], 0.1, -0.2)
    with pytest.raises(ValueError):
        generate_sbm([3, 3], 1.2, 0.0)


def test_sbm_edge_density_within_three_sigma():
    g = generate_sbm([100, 100], 0.1, 0.01, feature_dim=4, seed=11)
    e = g.edge_array()
    same = g.labels[e[:, 0]] == g.labels[e[:, 1]]
    n_in_pairs = 2 * (100 * 99 // 2)
    n_out_pairs = 100 * 100
    for count, pairs, p in ((same.sum(), n_in_pairs, 0.1), ((~same).sum(), n_out_pairs, 0.01)):
        sigma = np.sqrt(pairs * p * (1 - p))
        assert abs(count - pairs * p) < 3 * sigma


def test_sbm_bit_reproducible():
    a = generate_sbm([20, 30], 0.3, 0.05, feature_dim=5, feature_noise=0.7, seed=9, label_flip=0.2)
    b = generate_sbm([20, 30], 0.3, 0.05, feature_dim=5, feature_noise=0.7, seed=9, label_flip=0.2)
    assert np.array_equal(a.csr_targets, b.csr_targets)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)


def test_sbm_label_flip_fraction():
    g = generate_sbm([100, 100], 0.1, 0.01, seed=2, label_flip=0.2)
    blocks = np.repeat([0, 1], 100)
    assert int((g.labels != blocks).sum()) == 40
