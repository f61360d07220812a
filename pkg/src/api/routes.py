"""API route definitions."""
import logging
import shutil
import tempfile
from pathlib import Path
from typing import Annotated, Literal

from fastapi import APIRouter, File, HTTPException, Query, UploadFile

from src.schemas import BenchReport, BenchRequest, IndexInfo, IndexUploadResponse, TopNResponse
from src.services.hamming_index import HammingIndex, IndexFormatError, QueryError, bench, topn
from src.services.index_store import IndexStore

logger = logging.getLogger(__name__)

router = APIRouter()
index_store = IndexStore()


def _require_index() -> HammingIndex:
    index = index_store.get_index()
    if index is None:
        raise HTTPException(status_code=404, detail="No index loaded. Upload one via POST /api/v1/index.")
    return index


@router.post("/index", response_model=IndexUploadResponse)
async def upload_index(
    table: Annotated[UploadFile, File(description="Serialized hash table (.bgch)")],
) -> IndexUploadResponse:
    safe_filename = "".join(c for c in (table.filename or "unknown") if c.isalnum() or c in ('.', '_', '-')).strip()
    logger.info(f"Loading index from upload {safe_filename}")

    tmp_path: Path | None = None
    try:
        with tempfile.NamedTemporaryFile(delete=False, suffix=".bgch") as f:
            shutil.copyfileobj(table.file, f)
            tmp_path = Path(f.name)
        index_store.load(tmp_path)
        return IndexUploadResponse(index=index_store.describe())

    except IndexFormatError as e:
        logger.error(f"Index format error: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Index upload failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Index upload failed: {str(e)}")
    finally:
        table.file.close()
        if tmp_path is not None and tmp_path.exists():
            tmp_path.unlink()


@router.get("/index", response_model=IndexInfo)
async def get_index_info() -> IndexInfo:
    _require_index()
    return index_store.describe()


@router.get("/topn/{node}", response_model=TopNResponse)
async def get_topn(
    node: int,
    n: Annotated[int, Query(ge=1)] = 20,
    mode: Literal["weighted", "hamming"] = "weighted",
) -> TopNResponse:
    index = _require_index()
    try:
        result = topn(index, node, n, mode=mode)
    except QueryError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return TopNResponse(query=result.query, mode=mode, entries=result.entries)


@router.post("/bench", response_model=BenchReport)
async def run_bench(request: BenchRequest) -> BenchReport:
    index = _require_index()
    try:
        return bench(index, queries=request.queries, n=request.topn, seed=request.seed)
    except QueryError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Bench failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Bench failed: {str(e)}")
