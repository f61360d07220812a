"""
Unit tests for the popcount index: distances, exact Top-N, exclusion and the
benchmark harness.
"""
import numpy as np
import pytest

from src.models import HashTable
from src.services.bitpack import pack_codes, tail_mask
from src.services.hamming_index import (
    HammingIndex,
    IndexFormatError,
    QueryError,
    bench,
    hamming_distance,
    select_topn,
    topn,
)
from src.services.hashing import random_table, save_table


def _oracle_scores(table: HashTable, x: int) -> np.ndarray:
    """float64 scores with the kernel's accumulation order: segments in sequence."""
    q_codes = table.codes[x]
    q_alphas = table.alphas[x].astype(np.float64)
    c_codes = table.codes[table.n1:]
    c_alphas = table.alphas[table.n1:].astype(np.float64)
    total = np.zeros(table.n2, dtype=np.float64)
    for s in range(table.num_segments):
        h = np.bitwise_count(np.bitwise_xor(c_codes[:, s], q_codes[s]) & tail_mask(table.d)).sum(axis=-1, dtype=np.int64)
        total += (q_alphas[s] * c_alphas[:, s]) * (table.d - 2 * h)
    return total


def _oracle_topn(scores: np.ndarray, n: int, excluded: set[int] = frozenset()) -> list[int]:
    ranked = sorted((i for i in range(scores.shape[0]) if i not in excluded), key=lambda i: (-scores[i], i))
    return ranked[:n]


def test_hamming_distance_identity_and_complement():
    rng = np.random.default_rng(0)
    v = rng.normal(size=130)
    a = pack_codes(v)
    b = pack_codes(-v - 1e-9)
    assert hamming_distance(a, a, 130) == 0
    assert hamming_distance(a, b, 130) == 130


def test_hamming_distance_matches_bit_oracle():
    rng = np.random.default_rng(1)
    for d in (1, 63, 64, 65, 200):
        x, y = rng.integers(0, 2, size=d).astype(bool), rng.integers(0, 2, size=d).astype(bool)
        assert hamming_distance(pack_codes(x), pack_codes(y), d) == int((x != y).sum())


def test_hamming_distance_ignores_trailing_bits():
    a = pack_codes(np.ones(10))
    b = a.copy()
    b[0] |= np.uint64(1 << 40)
    assert hamming_distance(a, b, 10) == 0


def test_hamming_distance_shape_mismatch():
    with pytest.raises(QueryError):
        hamming_distance(np.zeros(2, dtype=np.uint64), np.zeros(1, dtype=np.uint64), 70)


@pytest.mark.parametrize("n2, queries", [(500, 20), (5000, 100)])
def test_topn_matches_float64_oracle(n2: int, queries: int):
    table = random_table(n1=queries, n2=n2, d=96, num_layers=2, seed=n2)
    index = HammingIndex.from_table(table)
    for x in range(queries):
        result = topn(index, x, 20)
        oracle = _oracle_scores(table, x)
        assert [e.node for e in result.entries] == _oracle_topn(oracle, 20)
        np.testing.assert_array_equal([e.score for e in result.entries], oracle[[e.node for e in result.entries]])


def test_topn_ties_break_by_lower_id():
    table = random_table(n1=1, n2=6, d=16, num_layers=0, seed=2)
    codes = table.codes.copy()
    alphas = table.alphas.copy()
    codes[1 + 4] = codes[1 + 1]
    alphas[1 + 4] = alphas[1 + 1]
    tied = table.model_copy(update={"codes": codes, "alphas": alphas})
    index = HammingIndex.from_table(tied)

    ids = [e.node for e in topn(index, 0, 6).entries]
    assert ids.index(1) < ids.index(4)


def test_select_topn_boundary_ties():
    scores = np.array([3.0, 5.0, 5.0, 1.0, 5.0, 2.0])
    ids = np.arange(6)
    top_ids, top_scores = select_topn(scores, ids, 2)
    np.testing.assert_array_equal(top_ids, [1, 2])
    np.testing.assert_array_equal(top_scores, [5.0, 5.0])


def test_topn_exclusion_list_and_bitmap():
    table = random_table(n1=3, n2=50, d=64, num_layers=1, seed=3)
    index = HammingIndex.from_table(table)
    full = [e.node for e in topn(index, 1, 10).entries]
    excluded = full[:3]

    by_list = [e.node for e in topn(index, 1, 10, exclude=excluded).entries]
    bitmap = np.zeros(50, dtype=bool)
    bitmap[excluded] = True
    by_bitmap = [e.node for e in topn(index, 1, 10, exclude=bitmap).entries]

    assert by_list == by_bitmap
    assert not set(excluded) & set(by_list)
    assert by_list == _oracle_topn(_oracle_scores(table, 1), 10, set(excluded))


def test_topn_n_larger_than_candidates():
    index = HammingIndex.from_table(random_table(n1=2, n2=7, d=8, num_layers=0, seed=4))
    result = topn(index, 0, 100, exclude=[0, 1])
    assert len(result.entries) == 5
    scores = [e.score for e in result.entries]
    assert scores == sorted(scores, reverse=True)


def test_topn_rejects_bad_arguments():
    index = HammingIndex.from_table(random_table(n1=2, n2=7, d=8, num_layers=0, seed=4))
    with pytest.raises(QueryError):
        topn(index, 2, 5)
    with pytest.raises(QueryError):
        topn(index, 0, 0)
    with pytest.raises(QueryError):
        topn(index, 0, 5, exclude=[7])
    with pytest.raises(QueryError):
        topn(index, 0, 5, exclude=np.zeros(3, dtype=bool))
    with pytest.raises(QueryError):
        topn(index, 0, 5, mode="cosine")


def test_hamming_mode_ranks_by_distance():
    table = random_table(n1=2, n2=40, d=70, num_layers=1, seed=5)
    index = HammingIndex.from_table(table)
    result = topn(index, 0, 40, mode="hamming")
    distances = [
        sum(hamming_distance(table.codes[0, s], table.codes[2 + e.node, s], 70) for s in range(2))
        for e in result.entries
    ]
    assert distances == sorted(distances)
    assert [e.score for e in result.entries] == [-float(h) for h in distances]


def test_load_rejects_malformed(tmp_path, random_hash_table):
    path = tmp_path / "table.bgch"
    save_table(random_hash_table, path)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(IndexFormatError):
        HammingIndex.load(path)


def test_load_round_trip(tmp_path, random_hash_table):
    path = tmp_path / "table.bgch"
    save_table(random_hash_table, path)
    index = HammingIndex.load(path)
    assert (index.n1, index.n2, index.d, index.layers) == (40, 60, 70, 2)
    assert topn(index, 5, 10) == topn(HammingIndex.from_table(random_hash_table), 5, 10)


def test_bench_report_fields():
    index = HammingIndex.from_table(random_table(n1=10, n2=300, d=128, num_layers=1, seed=6))
    report = bench(index, queries=5, n=10, seed=0)
    assert report.queries == 5
    assert report.candidates == 300
    assert report.bops_per_query == 300 * 128 * 2
    assert report.flops_per_query == 4 * 300 * 2
    assert report.flops_per_query_float == 2 * 300 * 128 * 2
    assert report.mean_us_hamming > 0 and report.mean_us_float > 0
    assert report.speedup == pytest.approx(report.mean_us_float / report.mean_us_hamming)


def test_bench_rejects_empty_run():
    index = HammingIndex.from_table(random_table(n1=2, n2=5, d=8, num_layers=0, seed=0))
    with pytest.raises(QueryError):
        bench(index, queries=0)


@pytest.mark.slow
def test_popcount_path_beats_float_baseline():
    index = HammingIndex.from_table(random_table(n1=50, n2=50_000, d=256, num_layers=2, seed=7))
    report = bench(index, queries=50, n=20, seed=1)
    assert report.speedup >= 4.0


@pytest.mark.slow
def test_scan_throughput_is_linear_in_candidates():
    def best_us(n2: int) -> float:
        index = HammingIndex.from_table(random_table(n1=20, n2=n2, d=1024, num_layers=4, seed=n2))
        return min(bench(index, queries=200, n=20, seed=r).mean_us_hamming for r in range(3))

    small, large = best_us(1_000), best_us(10_000)
    per_candidate_ratio = (10_000 / large) / (1_000 / small)
    assert 0.8 <= per_candidate_ratio <= 1.2
