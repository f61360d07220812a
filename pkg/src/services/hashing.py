"""
Forward pass and hash-table assembly.

Layer-0 embeddings are propagated L times; every layer is hashed with sign(.)
and a rescaling factor alpha = ||V_x||_1 / d. The table is persisted in a
little-endian binary format:

    magic "BGCH", version u32, n1 u64, n2 u64, d u32, L u32,
    then per node: (L+1) f32 alphas, (L+1) * ceil(d/64) u64 code words.
"""
import logging
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from src.config import ModelConfig
from src.models import EmbeddingState, HashTable, NormalizedOperator
from src.services.bitpack import num_words, pack_codes
from src.services.graph import propagate

logger = logging.getLogger(__name__)

MAGIC = b"BGCH"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQQII")
# matches the upper bound of ModelConfig.layers
MAX_LAYERS = 4


class NonFiniteEmbeddingError(ArithmeticError):
    """Propagation produced NaN or inf values."""
    pass


class TableFormatError(ValueError):
    """Serialized table is malformed."""
    pass


def init_embeddings(num_nodes: int, cfg: ModelConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, cfg.init_scale, size=(num_nodes, cfg.d)).astype(np.float32)


def forward(op: NormalizedOperator, v0: np.ndarray, num_layers: int) -> EmbeddingState:
    """V^(l+1) = A_hat V^(l) for l < L; layer 0 is v0 itself."""
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    if not np.all(np.isfinite(v0)):
        raise NonFiniteEmbeddingError("Non-finite values in the layer-0 embeddings")
    layers = [v0]
    for layer in range(num_layers):
        nxt = propagate(op, layers[-1])
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteEmbeddingError(f"Non-finite values after propagation layer {layer + 1}")
        layers.append(nxt)
    return EmbeddingState(layers=layers)


def sign_codes(values: np.ndarray) -> np.ndarray:
    """Strict sign with sign(0) = +1, as int8."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int8)


def hash_layer(row: np.ndarray) -> tuple[np.ndarray, float]:
    """Code and rescaling factor of one embedding row."""
    row = np.asarray(row)
    codes = sign_codes(row)
    alpha = float(np.abs(row.astype(np.float64)).sum() / row.shape[-1])
    return codes, alpha


def rescaling_factors(values: np.ndarray) -> np.ndarray:
    """alpha = mean(|V|) along the last axis, accumulated in float64."""
    values = np.asarray(values)
    return (np.abs(values.astype(np.float64)).sum(axis=-1) / values.shape[-1]).astype(np.float32)


def assemble(
    state: EmbeddingState,
    n1: int,
    rescale: bool = True,
    segment_layers: Sequence[int] | None = None,
) -> HashTable:
    """
    Hash the selected layers (all of 0..L by default) and concatenate them
    per node. With `rescale=False` every alpha is fixed to 1.
    """
    if segment_layers is None:
        segment_layers = tuple(range(state.num_layers + 1))
    segment_layers = tuple(int(layer) for layer in segment_layers)
    stacked = np.stack([state.layers[layer] for layer in segment_layers], axis=1)  # (n, S, d)

    codes = pack_codes(stacked)
    if rescale:
        alphas = rescaling_factors(stacked)
    else:
        alphas = np.ones(stacked.shape[:2], dtype=np.float32)

    n, _, d = stacked.shape
    return HashTable(
        n1=n1, n2=n - n1, d=d, codes=codes, alphas=alphas, segment_layers=segment_layers
    )


def table_nbytes(table: HashTable) -> int:
    """Exact serialized size."""
    per_node = table.num_segments * (4 + 8 * table.num_words)
    return HEADER.size + table.num_nodes * per_node


def _node_dtype(num_segments: int, words: int) -> np.dtype:
    return np.dtype([
        ("alphas", "<f4", (num_segments,)),
        ("codes", "<u8", (num_segments, words)),
    ])


def save_table(table: HashTable, path: Path) -> int:
    """Write the binary table; returns the number of bytes written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = np.empty(table.num_nodes, dtype=_node_dtype(table.num_segments, table.num_words))
    records["alphas"] = table.alphas
    records["codes"] = table.codes
    header = HEADER.pack(MAGIC, FORMAT_VERSION, table.n1, table.n2, table.d, table.layers)
    with open(path, mode="wb") as f:
        f.write(header)
        f.write(records.tobytes())
    size = table_nbytes(table)
    logger.info(f"Wrote hash table to {path} ({size} bytes)")
    return size


def load_table(path: Path) -> HashTable:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise TableFormatError(f"Hash table file not found: {path}")
    if len(blob) < HEADER.size:
        raise TableFormatError("File is shorter than the table header")

    magic, version, n1, n2, d, layers = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise TableFormatError(f"Bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TableFormatError(f"Unsupported table version {version}")
    if d < 1:
        raise TableFormatError("Code dimension must be positive")
    if n1 < 1 or n2 < 1:
        raise TableFormatError(f"Both node sets must be non-empty, got n1={n1} n2={n2}")
    if layers > MAX_LAYERS:
        raise TableFormatError(f"Layer count {layers} exceeds the maximum of {MAX_LAYERS}")

    num_segments = layers + 1
    dtype = _node_dtype(num_segments, num_words(d))
    expected = HEADER.size + (n1 + n2) * dtype.itemsize
    if len(blob) != expected:
        raise TableFormatError(f"Expected {expected} bytes, found {len(blob)}")

    records = np.frombuffer(blob, dtype=dtype, offset=HEADER.size, count=n1 + n2)
    return HashTable(
        n1=n1,
        n2=n2,
        d=d,
        codes=records["codes"].astype(np.uint64),
        alphas=records["alphas"].astype(np.float32),
        segment_layers=tuple(range(num_segments)),
    )


def random_table(n1: int, n2: int, d: int, num_layers: int, seed: int = 0) -> HashTable:
    """Uniform random codes with alpha ~ U(0, 1); used for benchmarks."""
    rng = np.random.default_rng(seed)
    n = n1 + n2
    num_segments = num_layers + 1
    signs = rng.integers(0, 2, size=(n, num_segments, d)).astype(np.bool_)
    alphas = rng.random((n, num_segments)).astype(np.float32)
    return HashTable(
        n1=n1, n2=n2, d=d, codes=pack_codes(signs), alphas=alphas,
        segment_layers=tuple(range(num_segments)),
    )
