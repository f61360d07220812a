"""
Core domain models for the application.
These models represent the graph, the embedding state, the hash table and the
per-step training artifacts. Array fields hold numpy / scipy objects.
"""
from logging import getLogger
from typing import Annotated

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.services.bitpack import num_words, unpack_codes

logger = getLogger(__name__)

_ARRAYS = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class BipartiteGraph(BaseModel):
    """
    Two disjoint node sets and the edges between them.
    V2 node v lives at unified index n1 + v in `adjacency`.
    """
    model_config = _ARRAYS

    n1: Annotated[int, Field(ge=0)]
    n2: Annotated[int, Field(ge=0)]
    edges: np.ndarray  # (E, 2) int64, (u, v) with u in V1, v in V2, sorted and unique
    adjacency: sp.csr_matrix

    @classmethod
    def from_edges(cls, n1: int, n2: int, edges: np.ndarray) -> "BipartiteGraph":
        """Deduplicate, sort and build the symmetric CSR adjacency."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        edges = np.unique(edges, axis=0)
        n = n1 + n2
        rows = np.concatenate([edges[:, 0], n1 + edges[:, 1]])
        cols = np.concatenate([n1 + edges[:, 1], edges[:, 0]])
        data = np.ones(rows.shape[0], dtype=np.float32)
        adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        adjacency.sort_indices()
        return cls(n1=n1, n2=n2, edges=edges, adjacency=adjacency)

    @model_validator(mode="after")
    def _check_invariants(self) -> "BipartiteGraph":
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise ValueError("edges must have shape (E, 2)")
        if self.edges.size:
            if self.edges.min() < 0:
                raise ValueError("negative node index in edges")
            if self.edges[:, 0].max() >= self.n1 or self.edges[:, 1].max() >= self.n2:
                raise ValueError("edge index out of bounds")
            if np.unique(self.edges, axis=0).shape[0] != self.edges.shape[0]:
                raise ValueError("duplicate edges")
        n = self.n1 + self.n2
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency shape does not match n1 + n2")
        if self.adjacency.nnz != 2 * self.edges.shape[0]:
            raise ValueError("adjacency is not the symmetric closure of edges")
        return self

    @property
    def num_nodes(self) -> int:
        return self.n1 + self.n2

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def neighbors(self, u: int) -> np.ndarray:
        """V2-local neighbour ids of V1 node u."""
        start, end = self.adjacency.indptr[u], self.adjacency.indptr[u + 1]
        return self.adjacency.indices[start:end] - self.n1


class NormalizedOperator(BaseModel):
    """D^{-1/2} A D^{-1/2} over the unified index space; immutable."""
    model_config = _ARRAYS

    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])


class EmbeddingState(BaseModel):
    """Layer-0 embeddings and their propagated layers V^(0..L)."""
    model_config = _ARRAYS

    layers: list[np.ndarray]

    @field_validator("layers")
    @classmethod
    def _same_shapes(cls, v: list[np.ndarray]) -> list[np.ndarray]:
        if not v:
            raise ValueError("at least layer 0 is required")
        if any(layer.shape != v[0].shape for layer in v):
            raise ValueError("all layers must share one shape")
        return v

    @property
    def v0(self) -> np.ndarray:
        return self.layers[0]

    @property
    def num_layers(self) -> int:
        """L: the number of propagation rounds."""
        return len(self.layers) - 1


class HashTable(BaseModel):
    """
    Per-node, per-segment sign codes (bit-packed) and rescaling factors.
    Segment s holds the hash of layer `segment_layers[s]`.
    """
    model_config = _ARRAYS

    n1: int
    n2: int
    d: Annotated[int, Field(ge=1)]
    codes: np.ndarray   # (n1+n2, S, W) uint64
    alphas: np.ndarray  # (n1+n2, S) float32
    segment_layers: tuple[int, ...]

    @model_validator(mode="after")
    def _check_layout(self) -> "HashTable":
        n = self.n1 + self.n2
        s = len(self.segment_layers)
        if self.codes.shape != (n, s, num_words(self.d)):
            raise ValueError(f"codes shape {self.codes.shape} inconsistent with n={n}, S={s}, d={self.d}")
        if self.codes.dtype != np.uint64:
            raise ValueError("codes must be uint64")
        if self.alphas.shape != (n, s) or self.alphas.dtype != np.float32:
            raise ValueError("alphas must be float32 of shape (n, S)")
        return self

    @property
    def num_nodes(self) -> int:
        return self.n1 + self.n2

    @property
    def num_segments(self) -> int:
        return len(self.segment_layers)

    @property
    def num_words(self) -> int:
        return int(self.codes.shape[2])

    @property
    def layers(self) -> int:
        """Header value L: number of stored segments minus one."""
        return self.num_segments - 1

    def signs(self, nodes: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Unpacked {-1,+1} codes of `nodes`, shape (m, S, d)."""
        bits = unpack_codes(self.codes[nodes], self.d)
        return np.where(bits, 1, -1).astype(dtype)


class AugmentedViews(BaseModel):
    """Two perturbed views of the continuous segments and rescaling factors of a batch."""
    model_config = _ARRAYS

    nodes: np.ndarray          # (m,) unified ids
    first: np.ndarray          # (m, S, d)  V'
    second: np.ndarray         # (m, S, d)  V''
    alpha_first: np.ndarray    # (m, S)     alpha'
    alpha_second: np.ndarray   # (m, S)     alpha''
    tau: float
    step: int

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])


class TrainBatch(BaseModel):
    """(x, y_pos, y_neg) triples; item ids are V2-local."""
    model_config = _ARRAYS

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @model_validator(mode="after")
    def _aligned(self) -> "TrainBatch":
        if not (self.users.shape == self.pos.shape == self.neg.shape):
            raise ValueError("users, pos and neg must have the same length")
        return self

    @property
    def size(self) -> int:
        return int(self.users.shape[0])


class LossBreakdown(BaseModel):
    """Loss parts and their combination L = bpr + lambda1 (cl1 + cl2) + lambda2 reg."""
    l_bpr: float
    l_cl1: float
    l_cl2: float
    l_reg: float
    l_total: float
    lambda1: float
    lambda2: float

    @model_validator(mode="after")
    def _finite(self) -> "LossBreakdown":
        values = [self.l_bpr, self.l_cl1, self.l_cl2, self.l_reg, self.l_total]
        if not all(np.isfinite(values)):
            logger.error(f"Non-finite loss breakdown: {values}")
            raise ValueError("loss parts must be finite")
        return self


class TopNEntry(BaseModel):
    node: int
    score: float


class TopNResult(BaseModel):
    """Ranked candidates, descending score, ties by ascending node id."""
    query: int
    entries: list[TopNEntry]

    @model_validator(mode="after")
    def _ranked(self) -> "TopNResult":
        ids = [e.node for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids in ranking")
        for a, b in zip(self.entries, self.entries[1:]):
            if b.score > a.score:
                raise ValueError("scores must be non-increasing")
        return self

    @property
    def nodes(self) -> list[int]:
        return [e.node for e in self.entries]
