"""
Query-time engine over a persisted hash table.

Candidates are the V2 nodes, stored contiguously (n2, S, W) so one query is a
linear scan. Scores use the segment-sum identity
    score(x, y) = sum_s alpha_x^s alpha_y^s (d - 2 popcount(Q_x^s XOR Q_y^s)),
accumulated in float64. The scan kernels are single-threaded numba loops.
"""
import logging
import time
from pathlib import Path
from typing import Iterable, Literal

import numpy as np
from numba import njit

from src.models import HashTable, TopNEntry, TopNResult
from src.schemas import BenchReport
from src.services.bitpack import num_words, tail_mask
from src.services.hashing import TableFormatError, load_table

logger = logging.getLogger(__name__)

ScoreMode = Literal["weighted", "hamming"]


class IndexFormatError(ValueError):
    """Index file could not be loaded."""
    pass


class QueryError(ValueError):
    """Invalid query parameters."""
    pass


# --- kernels ---

@njit(inline="always", nogil=True, cache=True)
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(nogil=True, cache=True)
def _weighted_scores(q_codes, q_alphas, c_codes, c_alphas, masks, d):
    n, segments, words = c_codes.shape
    out = np.empty(n, dtype=np.float64)
    for j in range(n):
        s = 0.0
        for seg in range(segments):
            h = np.int64(0)
            for w in range(words):
                h += _popcount64((q_codes[seg, w] ^ c_codes[j, seg, w]) & masks[w])
            s += (q_alphas[seg] * c_alphas[j, seg]) * (d - 2 * h)
        out[j] = s
    return out


@njit(nogil=True, cache=True)
def _hamming_distances(q_codes, c_codes, masks):
    n, segments, words = c_codes.shape
    out = np.empty(n, dtype=np.int64)
    for j in range(n):
        h = np.int64(0)
        for seg in range(segments):
            for w in range(words):
                h += _popcount64((q_codes[seg, w] ^ c_codes[j, seg, w]) & masks[w])
        out[j] = h
    return out


@njit(nogil=True, cache=True, fastmath=True)
def _float_scores(query, candidates):
    n, k = candidates.shape
    out = np.empty(n, dtype=np.float32)
    for j in range(n):
        s = np.float32(0.0)
        for i in range(k):
            s += query[i] * candidates[j, i]
        out[j] = s
    return out


# --- index ---

class HammingIndex:
    """Immutable, shareable view of a HashTable arranged for candidate scans."""

    def __init__(self, table: HashTable):
        self.table = table
        self.candidate_codes = np.ascontiguousarray(table.codes[table.n1:])
        self.candidate_alphas = np.ascontiguousarray(table.alphas[table.n1:], dtype=np.float64)
        self.masks = tail_mask(table.d)

    @classmethod
    def from_table(cls, table: HashTable) -> "HammingIndex":
        return cls(table)

    @classmethod
    def load(cls, path: Path) -> "HammingIndex":
        try:
            table = load_table(path)
        except TableFormatError as e:
            raise IndexFormatError(str(e)) from e
        logger.info(f"Loaded index from {path}: n1={table.n1}, n2={table.n2}, d={table.d}, segments={table.num_segments}")
        return cls(table)

    @property
    def n1(self) -> int:
        return self.table.n1

    @property
    def n2(self) -> int:
        return self.table.n2

    @property
    def d(self) -> int:
        return self.table.d

    @property
    def layers(self) -> int:
        return self.table.layers

    def query_codes(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Codes (S, W) and float64 alphas (S,) of V1 node x."""
        if not 0 <= x < self.n1:
            raise QueryError(f"Query node {x} out of range [0, {self.n1})")
        return self.table.codes[x], self.table.alphas[x].astype(np.float64)

    def scores(self, q_codes: np.ndarray, q_alphas: np.ndarray, mode: ScoreMode = "weighted") -> np.ndarray:
        """Score of every candidate; higher is better in both modes."""
        if mode == "weighted":
            return _weighted_scores(q_codes, q_alphas, self.candidate_codes, self.candidate_alphas, self.masks, self.d)
        if mode == "hamming":
            return -_hamming_distances(q_codes, self.candidate_codes, self.masks).astype(np.float64)
        raise QueryError(f"Unknown score mode: {mode}")


def hamming_distance(a: np.ndarray, b: np.ndarray, d: int) -> int:
    """Differing bits among the first d positions of two packed codes."""
    a = np.asarray(a, dtype=np.uint64).ravel()
    b = np.asarray(b, dtype=np.uint64).ravel()
    words = num_words(d)
    if a.shape != (words,) or b.shape != (words,):
        raise QueryError(f"Packed codes of shapes {a.shape} and {b.shape} do not match d={d} ({words} words)")
    diff = np.bitwise_xor(a, b)
    diff &= tail_mask(d)
    return int(np.bitwise_count(diff).sum())


def select_topn(scores: np.ndarray, ids: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact Top-n of (ids, scores): descending score, ties by ascending id.
    argpartition finds the n-th best score; every candidate reaching it is sorted exactly.
    """
    if n < 1:
        raise QueryError("N must be >= 1")
    if ids.shape[0] == 0:
        return ids, scores
    if n < ids.shape[0]:
        kth = np.argpartition(-scores, n - 1)[n - 1]
        keep = scores >= scores[kth]
        ids, scores = ids[keep], scores[keep]
    order = np.lexsort((ids, -scores))[:n]
    return ids[order], scores[order]


def _exclusion_mask(n2: int, exclude: Iterable[int] | np.ndarray | None) -> np.ndarray | None:
    if exclude is None:
        return None
    exclude = np.asarray(exclude)
    if exclude.dtype == np.bool_:
        if exclude.shape != (n2,):
            raise QueryError(f"Exclusion bitmap must have length {n2}")
        return exclude
    mask = np.zeros(n2, dtype=np.bool_)
    ids = exclude.astype(np.int64).ravel()
    if ids.size and (ids.min() < 0 or ids.max() >= n2):
        raise QueryError("Exclusion id out of range")
    mask[ids] = True
    return mask


def topn(
    index: HammingIndex,
    x: int,
    n: int,
    exclude: Iterable[int] | np.ndarray | None = None,
    mode: ScoreMode = "weighted",
) -> TopNResult:
    """
    Exact Top-n V2 nodes for V1 node x. `exclude` is a set of V2-local ids
    or a boolean bitmap of length n2; excluded nodes are never returned.
    N larger than the candidate count returns every candidate ranked.
    """
    if n < 1:
        raise QueryError("N must be >= 1")
    q_codes, q_alphas = index.query_codes(x)
    scores = index.scores(q_codes, q_alphas, mode)
    ids = np.arange(index.n2, dtype=np.int64)

    mask = _exclusion_mask(index.n2, exclude)
    if mask is not None:
        ids, scores = ids[~mask], scores[~mask]

    top_ids, top_scores = select_topn(scores, ids, n)
    return TopNResult(
        query=x,
        entries=[TopNEntry(node=int(i), score=float(s)) for i, s in zip(top_ids, top_scores)],
    )


def float_candidates(index: HammingIndex) -> tuple[np.ndarray, np.ndarray]:
    """alpha-scaled +-1 float32 vectors for all nodes: V1 queries and V2 candidates."""
    table = index.table
    signs = table.signs(np.arange(table.num_nodes), dtype=np.float32)
    scaled = signs * table.alphas[..., None]
    flat = np.ascontiguousarray(scaled.reshape(table.num_nodes, -1))
    return flat[: table.n1], flat[table.n1:]


def bench(index: HammingIndex, queries: int = 1000, n: int = 20, seed: int = 0) -> BenchReport:
    """
    Mean wall time per Top-n query for the popcount path and a float32
    dot-product baseline, over the same candidates and query nodes.
    """
    if queries < 1:
        raise QueryError("queries must be >= 1")
    if index.n1 < 1 or index.n2 < 1:
        raise QueryError("Index needs at least one query node and one candidate")

    rng = np.random.default_rng(seed)
    query_nodes = rng.integers(0, index.n1, size=queries)
    ids = np.arange(index.n2, dtype=np.int64)
    float_queries, float_cands = float_candidates(index)

    # compile both kernels before timing
    q_codes, q_alphas = index.query_codes(int(query_nodes[0]))
    index.scores(q_codes, q_alphas)
    _float_scores(float_queries[0], float_cands)

    start = time.perf_counter()
    for x in query_nodes:
        q_codes, q_alphas = index.query_codes(int(x))
        select_topn(index.scores(q_codes, q_alphas), ids, n)
    hamming_s = time.perf_counter() - start

    start = time.perf_counter()
    for x in query_nodes:
        select_topn(_float_scores(float_queries[x], float_cands).astype(np.float64), ids, n)
    float_s = time.perf_counter() - start

    segments = index.table.num_segments
    mean_us_hamming = hamming_s / queries * 1e6
    mean_us_float = float_s / queries * 1e6
    report = BenchReport(
        queries=queries,
        candidates=index.n2,
        d=index.d,
        layers=index.layers,
        topn=n,
        mean_us_hamming=mean_us_hamming,
        mean_us_float=mean_us_float,
        speedup=mean_us_float / mean_us_hamming if mean_us_hamming > 0 else float("inf"),
        bops_per_query=index.n2 * index.d * segments,
        flops_per_query=4 * index.n2 * segments,
        flops_per_query_float=2 * index.n2 * index.d * segments,
    )
    logger.info(
        f"Bench over {index.n2} candidates: hamming {mean_us_hamming:.1f}us, "
        f"float32 {mean_us_float:.1f}us, speedup {report.speedup:.2f}x"
    )
    return report
