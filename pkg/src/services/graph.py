"""
Symmetric normalization of the bipartite adjacency and sparse propagation.
"""
import logging

import numpy as np
import scipy.sparse as sp

from src.models import BipartiteGraph, NormalizedOperator

logger = logging.getLogger(__name__)


class GraphDimensionError(ValueError):
    """Embedding matrix does not match the operator."""
    pass


def normalize(graph: BipartiteGraph, dtype=np.float32) -> NormalizedOperator:
    """
    Build D^{-1/2} A D^{-1/2}. Isolated nodes keep empty rows, so their
    propagated embedding is zero.
    """
    degrees = graph.degrees
    isolated = int(np.count_nonzero(degrees == 0))
    if isolated:
        logger.info(f"{isolated} isolated nodes get empty operator rows")

    inv_sqrt = np.zeros(degrees.shape[0], dtype=np.float64)
    nonzero = degrees > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(degrees[nonzero].astype(np.float64))

    adjacency = graph.adjacency.astype(np.float64).tocoo()
    values = inv_sqrt[adjacency.row] * adjacency.data * inv_sqrt[adjacency.col]
    matrix = sp.csr_matrix(
        (values.astype(dtype), (adjacency.row, adjacency.col)),
        shape=adjacency.shape,
    )
    matrix.sort_indices()
    return NormalizedOperator(matrix=matrix, degrees=degrees)


def propagate(op: NormalizedOperator, embeddings: np.ndarray) -> np.ndarray:
    """One round of A_hat @ V. Row results are independent of each other."""
    if embeddings.ndim != 2 or embeddings.shape[0] != op.n:
        raise GraphDimensionError(
            f"Embedding matrix has shape {embeddings.shape}, operator expects ({op.n}, c)"
        )
    result = op.matrix @ embeddings
    return np.asarray(result, dtype=np.result_type(op.matrix.dtype, embeddings.dtype))
