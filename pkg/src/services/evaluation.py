"""
Evaluation harness: train/test splitting, Recall@N / NDCG@N, storage and
compression accounting, and the planted-structure graph generator.
"""
import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from src.models import BipartiteGraph, HashTable
from src.schemas import CompressionReport, EvalReport, StorageReport
from src.services.hamming_index import HammingIndex, ScoreMode, topn
from src.services.hashing import HEADER, table_nbytes

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    """Metrics cannot be computed for the given inputs."""
    pass


class PlantedGraphError(ValueError):
    """Invalid planted-graph parameters or an empty draw."""
    pass


def split(graph: BipartiteGraph, ratio: float, seed: int = 0) -> tuple[BipartiteGraph, np.ndarray]:
    """
    Hold out round(deg * ratio) edges per V1 node (at least one, never all).
    Nodes with a single edge keep it in train. Both node counts are preserved.
    """
    if not 0.0 < ratio < 1.0:
        raise EvaluationError("split ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_rows: list[np.ndarray] = []
    test_rows: list[np.ndarray] = []

    for u in range(graph.n1):
        items = graph.neighbors(u)
        deg = items.shape[0]
        if deg == 0:
            continue
        if deg < 2:
            train_rows.append(np.array([[u, items[0]]], dtype=np.int64))
            continue
        n_test = min(deg - 1, max(1, round(deg * ratio)))
        held = np.zeros(deg, dtype=np.bool_)
        held[rng.choice(deg, size=n_test, replace=False)] = True
        users = np.full(deg, u, dtype=np.int64)
        pairs = np.stack([users, items.astype(np.int64)], axis=1)
        train_rows.append(pairs[~held])
        test_rows.append(pairs[held])

    train_edges = np.concatenate(train_rows) if train_rows else np.empty((0, 2), dtype=np.int64)
    test_edges = np.concatenate(test_rows) if test_rows else np.empty((0, 2), dtype=np.int64)
    logger.info(f"Split {graph.num_edges} edges into {train_edges.shape[0]} train / {test_edges.shape[0]} test")
    train = BipartiteGraph.from_edges(graph.n1, graph.n2, train_edges)
    return train, np.unique(test_edges, axis=0).reshape(-1, 2)


def truth_sets(test_edges: np.ndarray) -> dict[int, set[int]]:
    truth: dict[int, set[int]] = {}
    for u, v in np.asarray(test_edges, dtype=np.int64).reshape(-1, 2):
        truth.setdefault(int(u), set()).add(int(v))
    return truth


def _ndcg(ranked: Sequence[int], truth: set[int], n: int) -> float:
    dcg = sum(1.0 / math.log2(rank + 2) for rank, item in enumerate(ranked[:n]) if item in truth)
    idcg = sum(1.0 / math.log2(rank + 2) for rank in range(min(n, len(truth))))
    return dcg / idcg


def recall_ndcg(
    results: Mapping[int, Sequence[int]],
    truth: Mapping[int, set[int]],
    ns: Iterable[int],
) -> EvalReport:
    """
    Macro-averaged Recall@N and binary-relevance NDCG@N over queries with a
    non-empty truth set. `results` maps each query to its ranked node ids.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns or ns[0] < 1:
        raise EvaluationError("N list must hold positive integers")
    queries = [q for q, items in truth.items() if items]
    if not queries:
        raise EvaluationError("Every query has an empty truth set")

    recall = {n: 0.0 for n in ns}
    ndcg = {n: 0.0 for n in ns}
    for q in queries:
        ranked = list(results.get(q, []))
        items = truth[q]
        for n in ns:
            hits = sum(1 for item in ranked[:n] if item in items)
            recall[n] += hits / len(items)
            ndcg[n] += _ndcg(ranked, items, n)

    count = len(queries)
    return EvalReport(
        recall_at={n: recall[n] / count for n in ns},
        ndcg_at={n: ndcg[n] / count for n in ns},
        num_queries=count,
        skipped_queries=len(truth) - count,
        truth_edges=sum(len(truth[q]) for q in queries),
    )


def random_recall_baseline(
    train: BipartiteGraph, truth: Mapping[int, set[int]], ns: Iterable[int]
) -> dict[int, float]:
    """
    Expected Recall@N of a uniformly random ranking over each query's
    non-excluded candidates: min(N, C) / C per query, macro-averaged.
    """
    queries = [q for q, items in truth.items() if items]
    if not queries:
        raise EvaluationError("Every query has an empty truth set")
    baseline = {}
    for n in sorted(set(ns)):
        total = 0.0
        for q in queries:
            candidates = train.n2 - train.neighbors(q).shape[0]
            total += min(n, candidates) / candidates if candidates else 0.0
        baseline[n] = total / len(queries)
    return baseline


def compression_report(d: int, layers: int) -> CompressionReport:
    if d < 1 or layers < 0:
        raise EvaluationError("d must be positive and layers non-negative")
    segments = layers + 1
    return CompressionReport(
        d=d,
        layers=layers,
        embedding_ratio=32 * d / (d + 32 * segments),
        layout_ratio=32 * d * segments / (d * segments + 32 * segments),
    )


def storage_report(table: HashTable) -> StorageReport:
    """Serialized payload bits against float32 storage of the same segments."""
    file_bytes = table_nbytes(table)
    code_bits = (file_bytes - HEADER.size) * 8
    float32_bits = table.num_nodes * table.num_segments * table.d * 32
    return StorageReport(
        code_bits=code_bits,
        float32_bits=float32_bits,
        ratio=float32_bits / code_bits if code_bits else 0.0,
        file_bytes=file_bytes,
        header_bytes=HEADER.size,
    )


def planted_graph(
    blocks: int, nodes_per_block: int, p_in: float, p_out: float, seed: int = 0
) -> BipartiteGraph:
    """
    Block bipartite graph: V1 block i links to V2 block i with probability
    p_in and to every other block with p_out.
    """
    if blocks < 1 or nodes_per_block < 1:
        raise PlantedGraphError("blocks and nodes_per_block must be positive")
    if p_in <= p_out:
        raise PlantedGraphError("p_in must be greater than p_out")
    n = blocks * nodes_per_block
    block_of = np.arange(n) // nodes_per_block
    probs = np.where(block_of[:, None] == block_of[None, :], p_in, p_out)
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(rng.random((n, n)) < probs)
    if rows.size == 0:
        raise PlantedGraphError("Planted graph has no edges")
    edges = np.stack([rows, cols], axis=1).astype(np.int64)
    logger.info(f"Planted graph: {blocks} blocks x {nodes_per_block} nodes, |E|={edges.shape[0]}")
    return BipartiteGraph.from_edges(n, n, edges)


def evaluate_index(
    index: HammingIndex,
    train: BipartiteGraph,
    test_edges: np.ndarray,
    ns: Iterable[int],
    mode: ScoreMode = "weighted",
) -> EvalReport:
    """Top-max(N) for every test query, excluding its train neighbours."""
    ns = sorted(set(ns))
    if train.n1 != index.n1 or train.n2 != index.n2:
        raise EvaluationError(
            f"Train graph ({train.n1}, {train.n2}) does not match index ({index.n1}, {index.n2})"
        )
    test_edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 2)
    if test_edges.size and (test_edges[:, 0].max() >= index.n1 or test_edges[:, 1].max() >= index.n2):
        raise EvaluationError("Test edge outside the index node range")

    truth = truth_sets(test_edges)
    depth = max(ns)
    results = {
        q: topn(index, q, depth, exclude=train.neighbors(q), mode=mode).nodes
        for q in truth
    }
    report = recall_ndcg(results, truth, ns)
    return report.model_copy(update={
        "random_recall_at": random_recall_baseline(train, truth, ns),
        "storage": storage_report(index.table),
    })
