"""
Index store for the hash table served by the API.
"""
import logging
from pathlib import Path

from src.schemas import IndexInfo
from src.services.evaluation import storage_report
from src.services.hamming_index import HammingIndex

logger = logging.getLogger(__name__)


class IndexStore:
    """
    A simple, in-memory holder for the active HammingIndex.
    This is treated as a singleton by the FastAPI routes.
    """
    def __init__(self):
        self._index: HammingIndex | None = None
        logger.info("IndexStore initialized.")

    def load(self, path: Path) -> HammingIndex:
        """Replace the active index with the table stored at `path`."""
        index = HammingIndex.load(Path(path))
        self.update_index(index)
        return index

    def update_index(self, index: HammingIndex):
        self._index = index
        logger.info(f"Index store updated: n1={index.n1}, n2={index.n2}, d={index.d}")

    def get_index(self) -> HammingIndex | None:
        return self._index

    def describe(self) -> IndexInfo | None:
        """Metadata of the active index, or None when nothing is loaded."""
        if self._index is None:
            return None
        table = self._index.table
        return IndexInfo(
            n1=table.n1,
            n2=table.n2,
            d=table.d,
            layers=table.layers,
            segments=table.num_segments,
            storage=storage_report(table),
        )
