"""
Unit tests for edge-list ingestion.

These tests validate parsing, error reporting with line numbers, duplicate
handling and the header round trip. We use the `tmp_path` fixture provided by
pytest to create temporary files for the service to ingest.
"""
from pathlib import Path

import numpy as np
import pytest

from src.services.ingestion import (
    EdgeListIngestion,
    EdgeListValidationError,
    IngestionError,
    file_hash,
    load_edge_list,
    write_edge_list,
)

SMALL_EDGES_CONTENT = """# users and items
0 0
0 2
1 1
2 2
"""

HEADER_EDGES_CONTENT = """#n1 5 n2 7
0 0
4 6
"""


@pytest.fixture
def service() -> EdgeListIngestion:
    """Returns a fresh EdgeListIngestion instance for each test."""
    return EdgeListIngestion()


@pytest.fixture
def edges_file(tmp_path: Path) -> Path:
    file_path = tmp_path / "edges.txt"
    file_path.write_text(SMALL_EDGES_CONTENT)
    return file_path


def test_load_happy_path(service: EdgeListIngestion, edges_file: Path):
    graph = service.load(edges_file)

    assert (graph.n1, graph.n2) == (3, 3)
    assert graph.num_edges == 4
    assert service.stats["total_edge_rows"] == 4
    assert service.stats["duplicate_edges"] == 0
    assert service.stats["comment_rows"] == 1
    assert service.content_hash == file_hash(edges_file)
    assert list(graph.neighbors(0)) == [0, 2]


def test_header_fixes_node_counts(service: EdgeListIngestion):
    graph = service.parse(HEADER_EDGES_CONTENT.splitlines())
    assert (graph.n1, graph.n2) == (5, 7)
    # nodes without edges are kept and isolated
    assert graph.degrees[1] == 0


def test_duplicates_are_dropped_with_warning(service: EdgeListIngestion, caplog):
    graph = service.parse(["0 1", "0 1", "1 0"])
    assert graph.num_edges == 2
    assert service.stats["duplicate_edges"] == 1
    assert "Dropped 1 duplicate edges" in caplog.text


@pytest.mark.parametrize(
    "lines, message",
    [
        (["0 1", "1 2 0.5"], "Weighted edges are not supported at line 2"),
        (["#n1 2 n2 2", "0 1", "2 0"], "index out of bounds at line 3"),
        (["0 1", "x 1"], "Could not parse integers at line 2"),
        (["0 1", "-1 0"], "Negative node id at line 2"),
        (["0"], "Expected two node ids at line 1"),
        (["0 1", "#n1 2 n2 2"], "Header must precede all edges"),
    ],
)
def test_parse_errors_report_line(service: EdgeListIngestion, lines: list[str], message: str):
    with pytest.raises(EdgeListValidationError, match=message):
        service.parse(lines)


def test_empty_edge_list_is_an_error(service: EdgeListIngestion):
    with pytest.raises(EdgeListValidationError, match="no edges"):
        service.parse(["# only a comment", ""])


def test_missing_file(service: EdgeListIngestion, tmp_path: Path):
    with pytest.raises(IngestionError, match="not found"):
        service.load(tmp_path / "absent.txt")


def test_write_then_load_keeps_bounds(tmp_path: Path):
    edges = np.array([[0, 3], [2, 1]])
    path = tmp_path / "split" / "test_edges.txt"
    write_edge_list(path, n1=4, n2=6, edges=edges)

    graph = load_edge_list(path)
    assert (graph.n1, graph.n2) == (4, 6)
    np.testing.assert_array_equal(graph.edges, edges)
