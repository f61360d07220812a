"""
Pydantic schemas for reports and API contracts (request/response models).
These define the JSON shape of everything the CLI and the API emit.
"""
from datetime import datetime, timezone
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.models import LossBreakdown, TopNEntry


class StorageReport(BaseModel):
    """Actual serialized size of a table against its float32 equivalent."""
    code_bits: int
    float32_bits: int
    ratio: float
    file_bytes: int
    header_bytes: int


class CompressionReport(BaseModel):
    """Analytic size-reduction ratios for a (d, L) configuration."""
    d: int
    layers: int
    embedding_ratio: float = Field(description="32d / (d + 32(L+1)): one float embedding vs L+1 codes and scalars")
    layout_ratio: float = Field(description="32d(L+1) / (d(L+1) + 32(L+1)): all float layers vs the stored table")


class EvalReport(BaseModel):
    """Top-N quality of an index against held-out edges."""
    recall_at: dict[int, float]
    ndcg_at: dict[int, float]
    num_queries: int
    skipped_queries: int = 0
    truth_edges: int
    random_recall_at: dict[int, float] = Field(default_factory=dict)
    split_ratio: float | None = None
    storage: StorageReport | None = None

    @field_validator("recall_at", "ndcg_at")
    @classmethod
    def check_unit_interval(cls, v: dict[int, float]) -> dict[int, float]:
        for n, value in v.items():
            if not 0.0 <= value <= 1.0 + 1e-12:
                raise ValueError(f"metric @{n} outside [0, 1]: {value}")
        return v


class BenchReport(BaseModel):
    """Single-threaded latency of Hamming vs float32 Top-N over identical candidates."""
    queries: int
    candidates: int
    d: int
    layers: int
    topn: int
    mean_us_hamming: float
    mean_us_float: float
    speedup: float
    bops_per_query: int
    flops_per_query: int
    flops_per_query_float: int


class EpochLog(BaseModel):
    """One line of the training history."""
    epoch: int
    step: int
    loss: LossBreakdown
    seconds: float
    recall_at: dict[int, float] | None = None


class RunManifest(BaseModel):
    """Immutable description of a training run; contains no timestamps."""
    model_config = ConfigDict(frozen=True)

    config: dict[str, Any]
    config_hash: str
    inputs: dict[str, str]
    package_version: str


class TrainResult(BaseModel):
    """Paths and summary of a finished training run."""
    table_path: str
    checkpoint_path: str
    manifest_path: str
    epochs_run: int
    history: list[EpochLog]
    report: EvalReport | None = None


class AblationRun(BaseModel):
    """
    One seed of an ablation. `*_bpr` is the per-epoch BPR loss; the
    `*_epochs_to_threshold` fields are the first epoch whose BPR loss is at
    or below the requested threshold (None when never reached or not asked).
    """
    seed: int
    full: EvalReport
    variant: EvalReport
    full_bpr: list[float] = Field(default_factory=list)
    variant_bpr: list[float] = Field(default_factory=list)
    full_epochs_to_threshold: int | None = None
    variant_epochs_to_threshold: int | None = None


class AblationReport(BaseModel):
    """Side-by-side metrics of the full model and one variant, per seed."""
    variant: str
    topn: int
    runs: list[AblationRun]
    full_recall: list[float]
    variant_recall: list[float]
    full_wins: int
    bpr_threshold: float | None = None
    full_median_epochs: float | None = None
    variant_median_epochs: float | None = None


# --- API ---

class IndexInfo(BaseModel):
    """Metadata of the index currently served."""
    n1: int
    n2: int
    d: int
    layers: int
    segments: int
    storage: StorageReport


class IndexUploadResponse(BaseModel):
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    index: IndexInfo


class TopNResponse(BaseModel):
    query: int
    mode: Literal["weighted", "hamming"]
    entries: list[TopNEntry]


class BenchRequest(BaseModel):
    queries: int = Field(default=100, ge=1, le=10_000)
    topn: int = Field(default=20, ge=1)
    seed: int = 0
