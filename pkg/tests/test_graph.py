"""
Unit tests for the bipartite graph model, normalization and propagation.
Oracles use dense float64 matrices built inside the tests.
"""
import numpy as np
import pytest

from src.models import BipartiteGraph
from src.services.graph import GraphDimensionError, normalize, propagate


def _dense_normalized(graph: BipartiteGraph) -> np.ndarray:
    n = graph.num_nodes
    a = np.zeros((n, n))
    for u, v in graph.edges:
        a[u, graph.n1 + v] = a[graph.n1 + v, u] = 1.0
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[:, None] * a * inv[None, :]


def test_from_edges_builds_symmetric_adjacency(random_graph: BipartiteGraph):
    adj = random_graph.adjacency
    assert adj.shape == (50, 50)
    assert (adj != adj.T).nnz == 0
    assert adj.nnz == 2 * random_graph.num_edges
    # no V1-V1 or V2-V2 blocks
    assert adj[:20, :20].nnz == 0
    assert adj[20:, 20:].nnz == 0


def test_from_edges_dedupes():
    graph = BipartiteGraph.from_edges(2, 2, np.array([[0, 1], [0, 1], [1, 0]]))
    assert graph.num_edges == 2


def test_out_of_bounds_edge_rejected():
    with pytest.raises(ValueError):
        BipartiteGraph.from_edges(2, 2, np.array([[0, 2]]))


def test_single_edge_operator(single_edge_graph: BipartiteGraph):
    op = normalize(single_edge_graph)
    np.testing.assert_allclose(op.matrix.toarray(), [[0.0, 1.0], [1.0, 0.0]])


def test_star_graph_weights(star_graph: BipartiteGraph):
    op = normalize(star_graph)
    dense = op.matrix.toarray()
    # hub degree 5, leaf degree 1
    np.testing.assert_allclose(dense[0, 2:], 1.0 / np.sqrt(5.0), rtol=1e-6)
    # isolated V1 node 1 has an empty row
    assert not dense[1].any()


def test_normalize_matches_dense_oracle(random_graph: BipartiteGraph):
    op = normalize(random_graph, dtype=np.float64)
    np.testing.assert_allclose(op.matrix.toarray(), _dense_normalized(random_graph), atol=1e-12)


def test_spectral_radius_at_most_one(random_graph: BipartiteGraph):
    dense = normalize(random_graph, dtype=np.float64).matrix.toarray()
    assert np.abs(np.linalg.eigvalsh(dense)).max() <= 1.0 + 1e-9


def test_propagate_matches_dense(random_graph: BipartiteGraph):
    op = normalize(random_graph, dtype=np.float64)
    v = np.random.default_rng(0).normal(size=(50, 8))
    np.testing.assert_allclose(propagate(op, v), _dense_normalized(random_graph) @ v, atol=1e-12)


def test_propagate_is_self_adjoint(random_graph: BipartiteGraph):
    op = normalize(random_graph)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 6)).astype(np.float32)
    y = rng.normal(size=(50, 6)).astype(np.float32)
    lhs = float(np.sum(propagate(op, x) * y))
    rhs = float(np.sum(x * propagate(op, y)))
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-5)


def test_propagate_rejects_wrong_shape(random_graph: BipartiteGraph):
    op = normalize(random_graph)
    with pytest.raises(GraphDimensionError):
        propagate(op, np.zeros((49, 4), dtype=np.float32))


def test_isolated_nodes_propagate_to_zero(star_graph: BipartiteGraph):
    op = normalize(star_graph)
    out = propagate(op, np.ones((7, 3), dtype=np.float32))
    assert not out[1].any()


def test_one_hop_moves_support_across_sides(random_graph: BipartiteGraph):
    op = normalize(random_graph)
    n1 = random_graph.n1
    rng = np.random.default_rng(2)

    left = np.zeros((random_graph.num_nodes, 4), dtype=np.float32)
    left[:n1] = rng.normal(size=(n1, 4))
    out = propagate(op, left)
    assert not out[:n1].any()

    right = np.zeros((random_graph.num_nodes, 4), dtype=np.float32)
    right[n1:] = rng.normal(size=(random_graph.n2, 4))
    out = propagate(op, right)
    assert not out[n1:].any()


def test_propagate_is_linear(random_graph: BipartiteGraph):
    op = normalize(random_graph, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 5))
    y = rng.normal(size=(50, 5))
    a, b = 0.7, -1.3
    np.testing.assert_allclose(
        propagate(op, a * x + b * y), a * propagate(op, x) + b * propagate(op, y), atol=1e-6
    )
