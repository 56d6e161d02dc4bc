import numpy as np
import pytest
import scipy.sparse as sp

from collabgnn.autodiff import Tensor
from collabgnn.errors import ShapeError, ValidationError
from collabgnn.graph import Graph, batch_graphs, normalize_adjacency, normalized_adjacency, per_graph_center
from collabgnn.layers import GCNLayer

from conftest import random_graph


def dense_normalized(n, edges):
    # straight from the definition, dense
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = np.diag(1 / np.sqrt(a.sum(axis=1)))
    return d @ a @ d


def test_single_edge():
    np.testing.assert_allclose(normalized_adjacency(2, [[0, 1]]).toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_empty_edges_is_identity():
    np.testing.assert_array_equal(normalized_adjacency(3, np.zeros((0, 2))).toarray(), np.eye(3))


def test_single_node():
    assert normalized_adjacency(1, np.zeros((0, 2))).toarray().tolist() == [[1.0]]


def test_path_graph():
    got = normalized_adjacency(3, [[0, 1], [1, 2]]).toarray()
    s = 1 / np.sqrt(6)
    expected = [[0.5, s, 0], [s, 1 / 3, s], [0, s, 0.5]]
    np.testing.assert_allclose(got, expected, atol=1e-15)


def test_random_graphs_symmetric_with_unit_spectral_radius(rng):
    for _ in range(100):
        n = int(rng.integers(1, 12))
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
        a = normalized_adjacency(n, np.array(pairs, dtype=np.int64).reshape(-1, 2)).toarray()
        np.testing.assert_allclose(a, a.T, atol=0)
        assert np.max(np.abs(np.linalg.eigvalsh(a))) <= 1 + 1e-12
        np.testing.assert_allclose(a, dense_normalized(n, pairs), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_complete_graph_keeps_constant_signal(n):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    a = normalized_adjacency(n, pairs)
    np.testing.assert_allclose(a @ np.full(n, 2.5), np.full(n, 2.5), atol=1e-14)


class TestGraphValidation:
    def test_reversed_edge(self):
        with pytest.raises(ValidationError):
            Graph(np.ones((3, 2)), [[1, 0]])

    def test_out_of_range(self):
        with pytest.raises(ValidationError, match="range"):
            Graph(np.ones((3, 2)), [[0, 3]])

    def test_duplicate(self):
        with pytest.raises(ValidationError, match="duplicate"):
            Graph(np.ones((3, 2)), [[0, 1], [0, 1]])

    def test_empty_features(self):
        with pytest.raises(ValidationError):
            Graph(np.ones((0, 2)), [])

    def test_normalize_adjacency_is_cached_csr(self, rng):
        g = random_graph(rng, 4)
        assert sp.isspmatrix_csr(normalize_adjacency(g))
        assert normalize_adjacency(g) is g.adjacency


class TestBatching:
    def test_ptr_and_block_structure(self, rng):
        graphs = [random_graph(rng, n) for n in (3, 1, 4)]
        b = batch_graphs(graphs)
        assert b.ptr.tolist() == [0, 3, 4, 8]
        assert b.graph_id.tolist() == [0, 0, 0, 1, 2, 2, 2, 2]
        dense = b.adjacency.toarray()
        for g, lo, hi in zip(graphs, b.ptr[:-1], b.ptr[1:]):
            np.testing.assert_array_equal(dense[lo:hi, lo:hi], g.adjacency.toarray())
        mask = np.zeros_like(dense, dtype=bool)
        for lo, hi in zip(b.ptr[:-1], b.ptr[1:]):
            mask[lo:hi, lo:hi] = True
        assert not dense[~mask].any()

    def test_batched_gcn_equals_per_graph(self, rng):
        graphs = [random_graph(rng, int(n), dim=5) for n in rng.integers(1, 9, size=6)]
        layer = GCNLayer(5, 3, rng)
        b = batch_graphs(graphs)
        batched = layer(b.adjacency, Tensor(b.x)).data
        single = np.concatenate([layer(g.adjacency, Tensor(g.node_features)).data for g in graphs])
        np.testing.assert_allclose(batched, single, atol=1e-12)

    def test_mixed_dims_rejected(self, rng):
        with pytest.raises(ValidationError, match="mixed"):
            batch_graphs([random_graph(rng, 2, dim=3), random_graph(rng, 2, dim=4)])

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            batch_graphs([])

    def test_subgraph_renormalizes(self, rng):
        b = batch_graphs([Graph(np.ones((3, 2)), [[0, 1], [1, 2]])])
        sub = b.subgraph(np.array([0, 1]))
        np.testing.assert_allclose(sub.adjacency.toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        assert sub.ptr.tolist() == [0, 2]
        assert b.subgraph(np.array([0, 1])) is sub


class TestCenters:
    def test_two_graphs(self):
        b = batch_graphs([Graph(np.zeros((2, 1)), []), Graph(np.zeros((1, 1)), [])])
        c = per_graph_center(b, Tensor([[1.0, 2.0], [3.0, 4.0], [10.0, 0.0]]))
        np.testing.assert_array_equal(c.data, [[2, 3], [10, 0]])

    def test_row_mismatch(self):
        b = batch_graphs([Graph(np.zeros((2, 1)), [])])
        with pytest.raises(ShapeError):
            per_graph_center(b, Tensor(np.ones((3, 2))))
