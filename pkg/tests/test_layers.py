import math

import numpy as np
import pytest

from collabgnn import autodiff as ad
from collabgnn.autodiff import Tensor, backward
from collabgnn.errors import ContractError, ShapeError
from collabgnn.graph import Graph, batch_graphs, normalized_adjacency
from collabgnn.layers import FusionLayer, GCNLayer, Linear, SAGPoolLayer, fuse, pool_size, readout, select_top

from conftest import random_graph


class TestGCN:
    def test_zero_input_gives_zero(self, rng):
        layer = GCNLayer(3, 4, rng)
        out = layer(normalized_adjacency(5, [[0, 1], [2, 3]]), Tensor(np.zeros((5, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((5, 4)))

    def test_complete_graph_constant_rows_identity_weight(self):
        layer = GCNLayer(2, 2, np.random.default_rng(0))
        layer.weight.data = np.eye(2)
        adj = normalized_adjacency(3, [[0, 1], [0, 2], [1, 2]])
        out = layer(adj, Tensor(np.tile([1.0, 2.0], (3, 1))))
        np.testing.assert_allclose(out.data, np.tile([1.0, 2.0], (3, 1)), atol=1e-15)

    def test_dense_triple_product(self, rng):
        g = random_graph(rng, 6, dim=4)
        layer = GCNLayer(4, 3, rng)
        expected = np.maximum(g.adjacency.toarray() @ g.node_features @ layer.weight.data, 0)
        np.testing.assert_allclose(layer(g.adjacency, Tensor(g.node_features)).data, expected, atol=1e-14)

    def test_permutation_equivariance(self, rng):
        g = random_graph(rng, 6, dim=4)
        layer = GCNLayer(4, 3, rng)
        perm = rng.permutation(6)
        p = np.eye(6)[perm]
        adj = g.adjacency.toarray()
        out = layer(g.adjacency, Tensor(g.node_features)).data
        out_perm = layer(p @ adj @ p.T, Tensor(g.node_features[perm])).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_row_mismatch(self, rng):
        with pytest.raises(ShapeError):
            GCNLayer(2, 2, rng)(normalized_adjacency(3, []), Tensor(np.ones((2, 2))))


class TestFuse:
    def test_unit_mu(self):
        out = fuse(Tensor([[1.0, 2.0]]), Tensor([[10.0, 20.0]]), Tensor([[1.0]]))
        assert out.data.tolist() == [[11, 22]]

    def test_zero_mu_is_identity_with_gradients(self):
        h = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        c = Tensor([[5.0, 6.0]], requires_grad=True)
        out = fuse(h, c, Tensor([[0.0]]))
        np.testing.assert_array_equal(out.data, h.data)
        backward(ad.sum_all(out))
        np.testing.assert_array_equal(h.grad, np.ones((2, 2)))
        np.testing.assert_array_equal(c.grad, np.zeros((1, 2)))

    def test_half_mu_zero_self(self):
        out = fuse(Tensor([[0.0, 0.0]]), Tensor([[4.0, 4.0]]), Tensor([[0.5]]))
        assert out.data.tolist() == [[2, 2]]

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            fuse(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))), Tensor([[1.0]]))

    def test_fusion_layer_is_symmetric_and_uses_prefusion_centers(self):
        bi = batch_graphs([Graph(np.zeros((2, 1)), [])])
        bt = batch_graphs([Graph(np.zeros((1, 1)), [])])
        layer = FusionLayer(mu_init=1.0)
        layer.text_to_image.data[:] = 0.5
        img, txt = layer(Tensor([[1.0], [3.0]]), bi, Tensor([[10.0]]), bt)
        assert img.data.ravel().tolist() == [6.0, 8.0]  # + 0.5 * 10
        assert txt.data.ravel().tolist() == [12.0]  # + 1.0 * mean(1, 3)

    def test_shared_mu(self):
        layer = FusionLayer(shared=True)
        assert layer.image_to_text is layer.text_to_image
        assert len(layer.parameters()) == 1


class TestPooling:
    @pytest.mark.parametrize("n,ratio,k", [(5, 0.8, 4), (1, 0.8, 1), (10, 0.7, 7), (10, 0.8, 8), (3, 0.5, 2), (2, 0.1, 1)])
    def test_pool_size(self, n, ratio, k):
        assert pool_size(n, ratio) == k

    def test_select_top_ties_and_order(self):
        scores = np.array([0.5, 0.9, 0.5, 0.5, 0.1])
        assert select_top(scores, np.array([0, 5]), 0.8).tolist() == [0, 1, 2, 3]
        assert select_top(scores, np.array([0, 3, 5]), 0.5).tolist() == [0, 1, 3]

    def test_three_node_oracle(self):
        # scripted scores: with w = [1, 0] the score of node i is tanh((A_hat x)_i0)
        x = np.array([[1.0, 5.0], [-2.0, 1.0], [3.0, 0.0]])
        g = Graph(x, [[0, 2]])
        layer = SAGPoolLayer(2, np.random.default_rng(0), ratio=0.5)
        layer.score_weight.data = np.array([[1.0], [0.0]])
        b = batch_graphs([g])
        out, sub, kept = layer(b, Tensor(b.x))
        z = np.tanh(g.adjacency.toarray() @ x[:, :1]).ravel()
        assert kept.tolist() == sorted(np.argsort(-z)[:2].tolist()) == [0, 2]
        np.testing.assert_allclose(out.data, x[[0, 2]] * z[[0, 2], None], atol=1e-15)
        np.testing.assert_allclose(sub.adjacency.toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_single_node_graph_kept(self, rng):
        b = batch_graphs([random_graph(rng, 1, dim=3)])
        out, sub, kept = SAGPoolLayer(3, rng)(b, Tensor(b.x))
        assert kept.tolist() == [0] and out.shape == (1, 3) and sub.num_nodes == 1

    def test_ungated_copies_features(self, rng):
        b = batch_graphs([random_graph(rng, 5, dim=3)])
        out, _, kept = SAGPoolLayer(3, rng, gate=False)(b, Tensor(b.x))
        np.testing.assert_array_equal(out.data, b.x[kept])

    def test_per_graph_counts(self, rng):
        b = batch_graphs([random_graph(rng, n, dim=3) for n in (5, 1, 10)])
        _, sub, _ = SAGPoolLayer(3, rng)(b, Tensor(b.x))
        assert np.diff(sub.ptr).tolist() == [4, 1, 8]

    def test_bad_ratio(self, rng):
        with pytest.raises(ValueError):
            SAGPoolLayer(3, rng, ratio=0.0)


class TestReadout:
    def test_two_rows(self):
        assert readout(Tensor([[1.0, 2.0], [3.0, 0.0]])).data.ravel().tolist() == [3, 2, 2, 1]

    def test_single_row(self):
        assert readout(Tensor([[5.0, 5.0]])).data.ravel().tolist() == [5, 5, 5, 5]

    def test_empty(self):
        with pytest.raises(ContractError):
            readout(Tensor(np.zeros((0, 2))))

    def test_permutation_invariant_exact(self, rng):
        h = rng.standard_normal((7, 4))
        perm = rng.permutation(7)
        assert readout(Tensor(h[perm])).data.tobytes() == readout(Tensor(h)).data.tobytes()

    def test_segments(self):
        out = readout(Tensor([[1.0], [3.0], [-2.0]]), [0, 2, 3])
        assert out.data.tolist() == [[3, 2], [-2, -2]]


def test_linear_affine(rng):
    layer = Linear(3, 2, rng)
    layer.bias.data = np.array([[1.0, -1.0]])
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(layer(Tensor(x)).data, x @ layer.weight.data + [1, -1], atol=1e-15)
    limit = math.sqrt(6 / 5)
    assert np.all(np.abs(layer.weight.data) <= limit)
