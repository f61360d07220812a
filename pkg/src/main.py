"""
Main FastAPI application entry point.
"""
import logging

from fastapi import FastAPI

from src.api import routes
from src.config import settings
from src.logging_config import setup_logging
from src.services.hamming_index import IndexFormatError

# --- Setup Logging ---
setup_logging(settings.log_level, settings.log_dir)

# --- Setup App ---
app = FastAPI(
    title="Bipartite Hash Retrieval",
    description="Top-N matching over graph convolutional hash codes in Hamming space.",
    version="0.1.0"
)

logger = logging.getLogger(__name__)

app.include_router(routes.router, prefix="/api/v1")


@app.on_event("startup")
async def load_configured_index():
    """Serve BGCH_INDEX_PATH right away when it is set."""
    if settings.index_path is None:
        return
    try:
        routes.index_store.load(settings.index_path)
    except IndexFormatError as e:
        logger.error(f"Could not load index from {settings.index_path}: {e}")


@app.get("/health")
async def health():
    return {"status": "ok", "index_loaded": routes.index_store.get_index() is not None}
