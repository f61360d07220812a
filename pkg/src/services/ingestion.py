"""
Ingestion of edge-list files into validated bipartite graphs.

Format: one edge per line `<u><ws><v>`, optional `#n1 N n2 M` header,
other `#`-prefixed lines are comments. Train/test split files share the format.
"""
import hashlib
import logging
import re
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from src.models import BipartiteGraph

logger = logging.getLogger(__name__)

HEADER_PATTERN = re.compile(r"^#\s*n1\s+(\d+)\s+n2\s+(\d+)\s*$")


class IngestionError(Exception):
    """Base exception for ingestion errors."""
    pass


class EdgeListValidationError(IngestionError):
    """Edge list could not be parsed or violates the graph contract."""
    pass


class EdgeListIngestion:
    """
    Parses an edge-list file, keeping per-file statistics.
    Duplicates are dropped and counted; every other defect is fatal.
    """
    def __init__(self):
        self.stats: dict[str, Any] = {}
        self.content_hash: str = ""

    def load(self, path: Path) -> BipartiteGraph:
        try:
            with open(path, mode="r", encoding="utf-8") as f:
                graph = self.parse(f)
        except FileNotFoundError:
            raise EdgeListValidationError(f"Edge-list file not found: {path}")
        self.content_hash = file_hash(path)
        logger.info(
            f"Loaded {path.name}: n1={graph.n1}, n2={graph.n2}, |E|={graph.num_edges}"
        )
        return graph

    def parse(self, lines: Iterable[str]) -> BipartiteGraph:
        self.stats = {"total_edge_rows": 0, "duplicate_edges": 0, "comment_rows": 0}
        header: tuple[int, int] | None = None
        pairs: list[tuple[int, int]] = []

        for line_number, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                match = HEADER_PATTERN.match(line)
                if match:
                    if header is not None or pairs:
                        raise EdgeListValidationError(
                            f"Header must precede all edges (line {line_number})"
                        )
                    header = (int(match.group(1)), int(match.group(2)))
                else:
                    self.stats["comment_rows"] += 1
                continue

            parts = line.split()
            if len(parts) == 3:
                raise EdgeListValidationError(
                    f"Weighted edges are not supported at line {line_number}"
                )
            if len(parts) != 2:
                raise EdgeListValidationError(
                    f"Expected two node ids at line {line_number}: {line!r}"
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListValidationError(
                    f"Could not parse integers at line {line_number}: {line!r}"
                )
            if u < 0 or v < 0:
                raise EdgeListValidationError(f"Negative node id at line {line_number}")
            if header is not None and (u >= header[0] or v >= header[1]):
                raise EdgeListValidationError(f"index out of bounds at line {line_number}")
            pairs.append((u, v))
            self.stats["total_edge_rows"] += 1

        if not pairs:
            raise EdgeListValidationError("Edge list contains no edges")

        edges = np.asarray(pairs, dtype=np.int64)
        if header is not None:
            n1, n2 = header
        else:
            n1, n2 = int(edges[:, 0].max()) + 1, int(edges[:, 1].max()) + 1

        graph = BipartiteGraph.from_edges(n1, n2, edges)
        duplicates = len(pairs) - graph.num_edges
        self.stats["duplicate_edges"] = duplicates
        self.stats["unique_edges"] = graph.num_edges
        if duplicates:
            logger.warning(f"Dropped {duplicates} duplicate edges.")
        return graph


def load_edge_list(path: Path) -> BipartiteGraph:
    return EdgeListIngestion().load(Path(path))


def write_edge_list(path: Path, n1: int, n2: int, edges: np.ndarray) -> None:
    """Write edges with a `#n1 N n2 M` header so bounds survive the round trip."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode="w", encoding="utf-8") as f:
        f.write(f"#n1 {n1} n2 {n2}\n")
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            f.write(f"{u}\t{v}\n")


def file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, mode="rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]
