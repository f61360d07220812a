"""
Dual feature augmentation for contrastive learning.

Continuous segments get orthant-constrained noise of fixed norm tau; rescaling
factors get additive scalar noise. Every (step, node, view) draws from its own
generator, so the views do not depend on batch order or parallelism.
"""
import logging

import numpy as np

from src.config import AlphaNoise
from src.models import AugmentedViews, EmbeddingState, HashTable

logger = logging.getLogger(__name__)


def view_rng(seed: int, step: int, node: int, view: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step, node, view)))


def perturb_embedding(
    values: np.ndarray, codes: np.ndarray, tau: float, rng: np.random.Generator
) -> np.ndarray:
    """
    V + eps with eps = eps_bar * Q rescaled to ||eps||_2 = tau, eps_bar ~ U(0,1)^d.
    Works row-wise on (..., d) inputs.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    values = np.asarray(values)
    while True:
        raw = rng.random(values.shape)
        norms = np.linalg.norm(raw, axis=-1, keepdims=True)
        if np.all(norms > 0):
            break
        logger.debug("Redrawing degenerate all-zero noise")
    noise = raw * codes / norms * tau
    return (values + noise).astype(values.dtype, copy=False)


def perturb_alpha(
    alpha: np.ndarray | float,
    rng: np.random.Generator,
    mode: AlphaNoise = AlphaNoise.UNIFORM01,
) -> np.ndarray | float:
    """alpha + u with u ~ U(0,1), or U(-1/2, 1/2) in centered mode."""
    alpha_arr = np.asarray(alpha)
    if np.any(alpha_arr < 0):
        raise ValueError("alpha must be non-negative")
    noise = rng.random(alpha_arr.shape)
    if mode == AlphaNoise.CENTERED:
        noise = noise - 0.5
    result = alpha_arr + noise
    if np.ndim(alpha) == 0:
        return float(result)
    return result.astype(alpha_arr.dtype, copy=False)


def make_views(
    state: EmbeddingState,
    table: HashTable,
    nodes: np.ndarray,
    tau: float,
    seed: int,
    step: int,
    alpha_noise: AlphaNoise = AlphaNoise.UNIFORM01,
) -> AugmentedViews:
    """Both views of every hashed segment for every batch node."""
    nodes = np.asarray(nodes, dtype=np.int64)
    segments = np.stack([state.layers[layer][nodes] for layer in table.segment_layers], axis=1)
    codes = table.signs(nodes, dtype=segments.dtype)
    alphas = table.alphas[nodes]

    views = [np.empty_like(segments), np.empty_like(segments)]
    alpha_views = [np.empty(alphas.shape, dtype=np.float64), np.empty(alphas.shape, dtype=np.float64)]
    for i, node in enumerate(nodes):
        for view in (0, 1):
            rng = view_rng(seed, step, int(node), view)
            views[view][i] = perturb_embedding(segments[i], codes[i], tau, rng)
            alpha_views[view][i] = perturb_alpha(alphas[i].astype(np.float64), rng, alpha_noise)

    return AugmentedViews(
        nodes=nodes,
        first=views[0],
        second=views[1],
        alpha_first=alpha_views[0],
        alpha_second=alpha_views[1],
        tau=tau,
        step=step,
    )
