"""
Backward pass through sign(.) and the propagation stack.

The forward sign is always exact; only the backward surrogate changes with
`EstimatorConfig.kind`. The Fourier surrogate differentiates the truncated
square-wave series
    sign(phi) ~ (4/pi) sum_{i odd <= n} sin(pi i phi / H) / i,
which gives (4/H) sum_{i odd <= n} cos(pi i phi / H).
"""
import logging
from typing import Sequence

import numpy as np

from src.config import EstimatorConfig, EstimatorKind, OptimConfig
from src.models import NormalizedOperator
from src.services.graph import GraphDimensionError, propagate

logger = logging.getLogger(__name__)


def _odd_terms(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.arange(1, n + 1, 2, dtype=np.float64)


def sign_forward(phi: np.ndarray | float) -> np.ndarray | float:
    """Strict sign with sign(0) = +1."""
    if np.ndim(phi) == 0:
        return 1.0 if phi >= 0 else -1.0
    return np.where(np.asarray(phi) >= 0, 1.0, -1.0)


def fourier_approx(phi: np.ndarray | float, n: int, h: float = 1.0) -> np.ndarray | float:
    terms = _odd_terms(n)
    phi_arr = np.asarray(phi, dtype=np.float64)
    series = np.sin(np.pi * phi_arr[..., None] * terms / h) / terms
    result = 4.0 / np.pi * series.sum(axis=-1)
    return float(result) if np.ndim(phi) == 0 else result


def fourier_grad(phi: np.ndarray | float, n: int, h: float = 1.0) -> np.ndarray | float:
    """Exact derivative of `fourier_approx`."""
    terms = _odd_terms(n)
    phi_arr = np.asarray(phi, dtype=np.float64)
    result = 4.0 / h * np.cos(np.pi * phi_arr[..., None] * terms / h).sum(axis=-1)
    return float(result) if np.ndim(phi) == 0 else result


def sign_backward(phi: np.ndarray, upstream: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    """upstream * d sign(phi) / d phi under the configured surrogate."""
    phi = np.asarray(phi)
    upstream = np.asarray(upstream)
    match cfg.kind:
        case EstimatorKind.FOURIER:
            local = fourier_grad(phi, cfg.n, cfg.h)
        case EstimatorKind.STE:
            local = (np.abs(phi) <= 1.0).astype(np.float64)
        case EstimatorKind.TANH:
            t = np.tanh(cfg.tanh_beta * phi.astype(np.float64))
            local = cfg.tanh_beta * (1.0 - t * t)
        case _:
            raise ValueError(f"Unknown estimator kind: {cfg.kind}")
    return (upstream * local).astype(np.result_type(phi.dtype, upstream.dtype), copy=False)


def backprop(op: NormalizedOperator, grads_at_layers: Sequence[np.ndarray]) -> np.ndarray:
    """
    Fold per-layer gradient contributions dL/dV^(l), l = 0..L, down to layer 0.
    A_hat is symmetric, so its adjoint is the forward operator.
    """
    if not grads_at_layers:
        raise ValueError("at least the layer-0 contribution is required")
    shape = grads_at_layers[0].shape
    for layer, grad in enumerate(grads_at_layers):
        if grad.shape != shape:
            raise GraphDimensionError(f"Gradient at layer {layer} has shape {grad.shape}, expected {shape}")

    g = grads_at_layers[-1]
    for layer in range(len(grads_at_layers) - 2, -1, -1):
        g = grads_at_layers[layer] + propagate(op, g)
    return g


class Adam:
    """Adam over a single parameter matrix; state is plain arrays so it checkpoints as-is."""

    def __init__(self, shape: tuple[int, ...], cfg: OptimConfig, dtype=np.float32):
        self.cfg = cfg
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0
        self.dtype = dtype

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameters; `params` is not modified."""
        cfg = self.cfg
        self.t += 1
        g = grad.astype(np.float64)
        self.m = cfg.adam_beta1 * self.m + (1.0 - cfg.adam_beta1) * g
        self.v = cfg.adam_beta2 * self.v + (1.0 - cfg.adam_beta2) * g * g
        m_hat = self.m / (1.0 - cfg.adam_beta1 ** self.t)
        v_hat = self.v / (1.0 - cfg.adam_beta2 ** self.t)
        update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        return (params.astype(np.float64) - update).astype(self.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"adam_m": self.m, "adam_v": self.v, "adam_t": np.asarray(self.t, dtype=np.int64)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if state["adam_m"].shape != self.m.shape:
            raise ValueError("Optimizer state does not match the parameter shape")
        self.m = np.array(state["adam_m"], dtype=np.float64)
        self.v = np.array(state["adam_v"], dtype=np.float64)
        self.t = int(state["adam_t"])
