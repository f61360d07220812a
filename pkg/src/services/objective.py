"""
Loss terms and their analytic gradients.

Scores follow the segment-wise Hamming identity
    Y(x, y) = sum_l alpha_x^l alpha_y^l (d - 2 D_H(Q_x^l, Q_y^l)),
which equals the inner product of the alpha-scaled {-1,+1} codes.
All reductions are sums over the batch.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

from src.models import AugmentedViews, HashTable, LossBreakdown, TrainBatch

logger = logging.getLogger(__name__)

LOGIT_CLAMP = 40.0


class ScoreIndexError(IndexError):
    """Node index outside its node set."""
    pass


@dataclass(frozen=True)
class BprGradients:
    """BPR loss with dense gradients over all table nodes."""
    loss: float
    codes: np.ndarray   # (n, S, d) dL/dQ (relaxed)
    alphas: np.ndarray  # (n, S)    dL/dalpha


@dataclass(frozen=True)
class ContrastiveGradients:
    """InfoNCE loss with gradients w.r.t. both views, aligned with the batch rows."""
    loss: float
    first: np.ndarray
    second: np.ndarray
    codes: np.ndarray | None = None  # (m, S, d), binary term only


def segment_hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-segment Hamming distance of packed codes (..., S, W) -> (..., S)."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def score(table: HashTable, x: int, y: int) -> float:
    """Matching score of V1 node x and V2 node y (V2-local id), via popcount."""
    if not 0 <= x < table.n1:
        raise ScoreIndexError(f"V1 node {x} out of range [0, {table.n1})")
    if not 0 <= y < table.n2:
        raise ScoreIndexError(f"V2 node {y} out of range [0, {table.n2})")
    yu = table.n1 + y
    distances = segment_hamming(table.codes[x], table.codes[yu])
    inner = table.d - 2 * distances
    alphas_x = table.alphas[x].astype(np.float64)
    alphas_y = table.alphas[yu].astype(np.float64)
    total = 0.0
    for s in range(table.num_segments):
        total += (alphas_x[s] * alphas_y[s]) * float(inner[s])
    return total


def bpr_terms(
    qx: np.ndarray, ax: np.ndarray,
    qp: np.ndarray, ap: np.ndarray,
    qn: np.ndarray, an: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """
    BPR on gathered rows. Codes are (B, S, d), alphas (B, S).
    Returns the summed loss and gradients keyed by input name.
    """
    dot_pos = np.einsum("bsd,bsd->bs", qx, qp)
    dot_neg = np.einsum("bsd,bsd->bs", qx, qn)
    y_pos = (ax * ap * dot_pos).sum(axis=1)
    y_neg = (ax * an * dot_neg).sum(axis=1)
    delta = np.clip(y_pos - y_neg, -LOGIT_CLAMP, LOGIT_CLAMP)
    loss = float(np.logaddexp(0.0, -delta).sum())

    g_delta = -expit(-delta)[:, None]  # dL/dY_pos; dL/dY_neg = -g_delta
    grads = {
        "ax": g_delta * (ap * dot_pos - an * dot_neg),
        "ap": g_delta * ax * dot_pos,
        "an": -g_delta * ax * dot_neg,
        "qx": g_delta[..., None] * ((ax * ap)[..., None] * qp - (ax * an)[..., None] * qn),
        "qp": g_delta[..., None] * (ax * ap)[..., None] * qx,
        "qn": -g_delta[..., None] * (ax * an)[..., None] * qx,
    }
    return loss, grads


def bpr_loss(batch: TrainBatch, table: HashTable) -> BprGradients:
    """
    -sum ln sigma(Y(x, y) - Y(x, y')). Gradients w.r.t. Q treat the code as the
    relaxed pre-sign variable handed to the estimator.
    """
    if batch.size == 0:
        raise ValueError("BPR batch is empty")
    users = batch.users
    pos = table.n1 + batch.pos
    neg = table.n1 + batch.neg

    qx, qp, qn = table.signs(users), table.signs(pos), table.signs(neg)
    ax, ap, an = table.alphas[users], table.alphas[pos], table.alphas[neg]
    loss, grads = bpr_terms(qx, ax, qp, ap, qn, an)

    g_codes = np.zeros((table.num_nodes, table.num_segments, table.d), dtype=np.float32)
    g_alphas = np.zeros((table.num_nodes, table.num_segments), dtype=np.float32)
    np.add.at(g_codes, users, grads["qx"])
    np.add.at(g_codes, pos, grads["qp"])
    np.add.at(g_codes, neg, grads["qn"])
    np.add.at(g_alphas, users, grads["ax"])
    np.add.at(g_alphas, pos, grads["ap"])
    np.add.at(g_alphas, neg, grads["an"])
    return BprGradients(loss=loss, codes=g_codes, alphas=g_alphas)


def info_nce(first: np.ndarray, second: np.ndarray, sigma: float) -> tuple[float, np.ndarray, np.ndarray]:
    """
    sum_x -log softmax_y(first_x . second_y / sigma)[x]; the denominator
    includes the positive pair. A single-row batch yields zero loss.
    """
    m = first.shape[0]
    if m < 2:
        logger.debug("Contrastive batch of size 1: loss defined as 0")
        return 0.0, np.zeros_like(first), np.zeros_like(second)
    logits = first @ second.T / sigma
    loss = float((logsumexp(logits, axis=1) - np.diag(logits)).sum())
    residual = softmax(logits, axis=1) - np.eye(m, dtype=logits.dtype)
    return loss, residual @ second / sigma, residual.T @ first / sigma


def binary_info_nce(
    alpha_first: np.ndarray, alpha_second: np.ndarray, gram: np.ndarray, sigma: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """
    InfoNCE over rescaled codes with per-segment scalars:
    logit(x, y) = sum_s alpha'_x^s alpha''_y^s (Q_x^s . Q_y^s) / sigma.
    `gram` is (m, m, S); its diagonal equals d.
    """
    m = alpha_first.shape[0]
    if m < 2:
        logger.debug("Contrastive batch of size 1: loss defined as 0")
        return 0.0, np.zeros_like(alpha_first), np.zeros_like(alpha_second)
    logits, residual = _binary_residual(alpha_first, alpha_second, gram, sigma)
    loss = float((logsumexp(logits, axis=1) - np.diag(logits)).sum())
    g_first = np.einsum("xy,ys,xys->xs", residual, alpha_second, gram) / sigma
    g_second = np.einsum("xy,xs,xys->ys", residual, alpha_first, gram) / sigma
    return loss, g_first, g_second


def _binary_residual(
    alpha_first: np.ndarray, alpha_second: np.ndarray, gram: np.ndarray, sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    logits = np.einsum("xs,ys,xys->xy", alpha_first, alpha_second, gram) / sigma
    residual = softmax(logits, axis=1) - np.eye(logits.shape[0], dtype=logits.dtype)
    return logits, residual


def binary_code_grad(
    alpha_first: np.ndarray,
    alpha_second: np.ndarray,
    signs: np.ndarray,
    sigma: float,
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """
    Gradient of the binary InfoNCE w.r.t. the shared codes Q (m, S, d), which
    enter every logit twice: as the row code and as the column code.
    """
    m = alpha_first.shape[0]
    if m < 2:
        return np.zeros_like(signs, dtype=np.float64)
    if gram is None:
        gram = np.einsum("xsd,ysd->xys", signs, signs, optimize=True)
    _, residual = _binary_residual(alpha_first, alpha_second, gram, sigma)
    as_row = np.einsum("zy,zs,ys,ysd->zsd", residual, alpha_first, alpha_second, signs, optimize=True)
    as_col = np.einsum("xz,xs,zs,xsd->zsd", residual, alpha_first, alpha_second, signs, optimize=True)
    return (as_row + as_col) / sigma


def cl_loss_continuous(views: AugmentedViews, sigma: float) -> ContrastiveGradients:
    """InfoNCE over the concatenated continuous views of all segments."""
    m, s, d = views.first.shape
    loss, g1, g2 = info_nce(views.first.reshape(m, s * d), views.second.reshape(m, s * d), sigma)
    return ContrastiveGradients(loss=loss, first=g1.reshape(m, s, d), second=g2.reshape(m, s, d))


def code_gram(table: HashTable, nodes: np.ndarray) -> np.ndarray:
    """Q_x^s . Q_y^s = d - 2 D_H for all pairs of `nodes`, shape (m, m, S)."""
    codes = table.codes[nodes]
    distances = segment_hamming(codes[:, None], codes[None, :])
    return (table.d - 2 * distances).astype(np.float64)


def cl_loss_binary(views: AugmentedViews, table: HashTable, sigma: float) -> ContrastiveGradients:
    """InfoNCE over the perturbed rescaling factors; code products come from popcount."""
    gram = code_gram(table, views.nodes)
    loss, g1, g2 = binary_info_nce(views.alpha_first, views.alpha_second, gram, sigma)
    signs = table.signs(views.nodes, dtype=np.float64)
    g_codes = binary_code_grad(views.alpha_first, views.alpha_second, signs, sigma, gram)
    return ContrastiveGradients(loss=loss, first=g1, second=g2, codes=g_codes)


def total_loss(
    l_bpr: float, l_cl1: float, l_cl2: float, l_reg: float, lambda1: float, lambda2: float
) -> LossBreakdown:
    total = l_bpr + lambda1 * (l_cl1 + l_cl2) + lambda2 * l_reg
    return LossBreakdown(
        l_bpr=l_bpr, l_cl1=l_cl1, l_cl2=l_cl2, l_reg=l_reg, l_total=total,
        lambda1=lambda1, lambda2=lambda2,
    )
