"""
Unit tests for splitting, Top-N metrics, storage accounting and the planted
graph generator.
"""
import math
from pathlib import Path

import numpy as np
import pytest

from src.models import BipartiteGraph
from src.services.evaluation import (
    EvaluationError,
    PlantedGraphError,
    compression_report,
    evaluate_index,
    planted_graph,
    random_recall_baseline,
    recall_ndcg,
    split,
    storage_report,
    truth_sets,
)
from src.services.hamming_index import HammingIndex, topn
from src.services.hashing import random_table, save_table


def _edge_set(edges: np.ndarray) -> set[tuple[int, int]]:
    return {(int(u), int(v)) for u, v in edges}


def test_split_is_a_partition(random_graph: BipartiteGraph):
    train, test = split(random_graph, 0.2, seed=0)
    train_set, test_set = _edge_set(train.edges), _edge_set(test)
    assert not train_set & test_set
    assert train_set | test_set == _edge_set(random_graph.edges)
    assert (train.n1, train.n2) == (random_graph.n1, random_graph.n2)


def test_split_keeps_at_least_one_train_edge(random_graph: BipartiteGraph):
    train, _ = split(random_graph, 0.9, seed=1)
    for u in range(random_graph.n1):
        if random_graph.neighbors(u).shape[0]:
            assert train.neighbors(u).shape[0] >= 1


def test_split_is_deterministic(random_graph: BipartiteGraph):
    a_train, a_test = split(random_graph, 0.3, seed=5)
    b_train, b_test = split(random_graph, 0.3, seed=5)
    np.testing.assert_array_equal(a_test, b_test)
    np.testing.assert_array_equal(a_train.edges, b_train.edges)


def test_split_single_edge_stays_in_train(single_edge_graph: BipartiteGraph):
    train, test = split(single_edge_graph, 0.5)
    assert test.shape == (0, 2)
    assert train.num_edges == 1


def test_split_small_ratio_holds_out_one_per_node(random_graph: BipartiteGraph):
    _, test = split(random_graph, 0.01, seed=2)
    assert test.shape[0] <= random_graph.n1


def test_split_rejects_bad_ratio(random_graph: BipartiteGraph):
    with pytest.raises(EvaluationError):
        split(random_graph, 1.0)


def test_recall_ndcg_examples():
    perfect = recall_ndcg({0: [3, 4, 9]}, {0: {3, 4}}, [5])
    assert perfect.recall_at[5] == 1.0
    assert perfect.ndcg_at[5] == pytest.approx(1.0)

    second = recall_ndcg({0: [5, 7]}, {0: {7}}, [2])
    assert second.recall_at[2] == 1.0
    assert second.ndcg_at[2] == pytest.approx(1.0 / math.log2(3), abs=1e-4)
    assert second.ndcg_at[2] == pytest.approx(0.6309, abs=1e-4)

    miss = recall_ndcg({0: [1, 2]}, {0: {7}}, [2])
    assert miss.recall_at[2] == 0.0
    assert miss.ndcg_at[2] == 0.0


def test_recall_is_macro_averaged_and_monotone():
    results = {0: [1, 2, 3, 4], 1: [9, 8, 7, 6]}
    truth = {0: {1, 4}, 1: {6}, 2: set()}
    report = recall_ndcg(results, truth, [1, 2, 4])
    assert report.num_queries == 2
    assert report.skipped_queries == 1
    assert report.truth_edges == 3
    assert report.recall_at[1] == pytest.approx(0.25)
    assert report.recall_at[4] == pytest.approx(1.0)
    values = [report.recall_at[n] for n in (1, 2, 4)]
    assert values == sorted(values)


def test_recall_ndcg_errors():
    with pytest.raises(EvaluationError):
        recall_ndcg({}, {0: set(), 1: set()}, [5])
    with pytest.raises(EvaluationError):
        recall_ndcg({0: [1]}, {0: {1}}, [0])


def test_compression_report_values():
    assert compression_report(1024, 4).embedding_ratio == pytest.approx(27.68, abs=0.01)
    assert compression_report(256, 2).embedding_ratio == pytest.approx(23.27, abs=0.01)
    assert compression_report(256, 2).layout_ratio == pytest.approx(32 * 256 / (256 + 32))
    assert compression_report(10**7, 2).embedding_ratio == pytest.approx(32.0, rel=1e-4)
    with pytest.raises(EvaluationError):
        compression_report(0, 2)


def test_storage_report_matches_file(random_hash_table, tmp_path: Path):
    path = tmp_path / "table.bgch"
    save_table(random_hash_table, path)
    report = storage_report(random_hash_table)
    assert report.file_bytes == path.stat().st_size
    assert report.code_bits == (path.stat().st_size - report.header_bytes) * 8
    assert report.float32_bits == 100 * 3 * 70 * 32


def test_planted_graph_edge_count():
    graph = planted_graph(4, 50, 0.3, 0.01, seed=0)
    npb2 = 50 * 50
    mean = 4 * npb2 * 0.3 + 12 * npb2 * 0.01
    std = math.sqrt(4 * npb2 * 0.3 * 0.7 + 12 * npb2 * 0.01 * 0.99)
    assert abs(graph.num_edges - mean) <= 3 * std
    assert (graph.n1, graph.n2) == (200, 200)


def test_planted_graph_blocks_are_disjoint_without_cross_edges():
    graph = planted_graph(3, 10, 0.5, 0.0, seed=1)
    assert (graph.edges[:, 0] // 10 == graph.edges[:, 1] // 10).all()


def test_planted_graph_is_seeded():
    a = planted_graph(2, 10, 0.4, 0.05, seed=3)
    b = planted_graph(2, 10, 0.4, 0.05, seed=3)
    np.testing.assert_array_equal(a.edges, b.edges)


def test_planted_graph_errors():
    with pytest.raises(PlantedGraphError):
        planted_graph(2, 10, 0.1, 0.1)
    with pytest.raises(PlantedGraphError):
        planted_graph(1, 1, 1e-12, 0.0)


def test_random_recall_baseline():
    train = BipartiteGraph.from_edges(1, 10, np.array([[0, 0], [0, 1]]))
    baseline = random_recall_baseline(train, {0: {5}}, [4, 20])
    assert baseline[4] == pytest.approx(0.5)
    assert baseline[20] == pytest.approx(1.0)


def test_evaluate_index_matches_manual_pipeline():
    table = random_table(n1=6, n2=12, d=32, num_layers=1, seed=8)
    index = HammingIndex.from_table(table)
    train = BipartiteGraph.from_edges(6, 12, np.array([[0, 0], [0, 1], [1, 2], [2, 3], [3, 4], [4, 5], [5, 6]]))
    test_edges = np.array([[0, 7], [1, 8], [1, 9], [4, 10]])

    report = evaluate_index(index, train, test_edges, [3, 5])

    truth = truth_sets(test_edges)
    results = {q: topn(index, q, 5, exclude=train.neighbors(q)).nodes for q in truth}
    manual = recall_ndcg(results, truth, [3, 5])
    assert report.recall_at == manual.recall_at
    assert report.ndcg_at == manual.ndcg_at
    assert report.num_queries == 3
    assert set(report.random_recall_at) == {3, 5}
    assert report.storage is not None and report.storage.code_bits > 0


def test_evaluate_index_rejects_mismatched_graph():
    index = HammingIndex.from_table(random_table(n1=4, n2=4, d=8, num_layers=0, seed=0))
    train = BipartiteGraph.from_edges(5, 4, np.array([[0, 0]]))
    with pytest.raises(EvaluationError):
        evaluate_index(index, train, np.array([[0, 1]]), [2])
