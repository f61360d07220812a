"""
Latent feature dispersion: rank-1 spectral damping V (I - eps P) of the
layer-0 embeddings, applied once before training when enabled.
"""
import logging

import numpy as np

from src.config import DispersionConfig

logger = logging.getLogger(__name__)


class DispersionError(ValueError):
    """Input matrix is degenerate for dispersion."""
    pass


def dispersing_vector(embeddings: np.ndarray, k: int, seed: int) -> np.ndarray:
    """
    Power iteration p <- V^T V p from p ~ N(0, I).
    The iterate is renormalized every round; the returned vector has unit length.
    """
    if k < 1:
        raise DispersionError("k must be a positive iteration count")
    v = np.asarray(embeddings, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] < 1:
        raise DispersionError(f"Expected an (n, c) matrix, got shape {v.shape}")
    if not np.any(v):
        raise DispersionError("Cannot disperse an all-zero matrix")

    rng = np.random.default_rng(seed)
    p = rng.standard_normal(v.shape[1])
    p /= np.linalg.norm(p)
    for _ in range(k):
        p = v.T @ (v @ p)
        norm = np.linalg.norm(p)
        if norm == 0.0:
            raise DispersionError("Dispersing vector vanished (start vector in the null space)")
        p /= norm
    return p


def projector(p: np.ndarray) -> np.ndarray:
    """P = p p^T / ||p||^2."""
    p = np.asarray(p, dtype=np.float64)
    return np.outer(p, p) / (p @ p)


def disperse(embeddings: np.ndarray, cfg: DispersionConfig) -> np.ndarray:
    """Return V (I - eps P); dtype follows the input."""
    p = dispersing_vector(embeddings, cfg.k, cfg.seed)
    v = np.asarray(embeddings, dtype=np.float64)
    dispersed = v - cfg.epsilon * np.outer(v @ p, p) / (p @ p)
    logger.info(f"Dispersed {v.shape[0]}x{v.shape[1]} embeddings (epsilon={cfg.epsilon}, k={cfg.k})")
    return dispersed.astype(np.asarray(embeddings).dtype, copy=False)
