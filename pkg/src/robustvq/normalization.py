"""Per-dimension batch normalization placed in front of the quantizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .numerics import as_matrix

__all__ = ["BatchNormState", "BatchNormCache", "batchnorm_forward", "batchnorm_backward"]


@dataclass
class BatchNormState:
    gain: np.ndarray
    bias: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, d: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.ones(d), np.zeros(d), np.zeros(d), np.ones(d), momentum, eps)

    @property
    def d(self) -> int:
        return self.gain.shape[0]


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray
    training: bool = field(default=True)


def batchnorm_forward(x, state: BatchNormState, training: bool):
    """Normalize ``x`` (n, d) and apply gain/bias.

    Training mode uses batch statistics (biased variance) and folds them into
    the running estimates; eval mode uses the running estimates.
    Returns ``(out, cache)``.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != state.d:
        raise ShapeError(f"input has {x.shape[1]} dims, batch norm expects {state.d}")
    if training:
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch norm in training mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean) * inv_std
    out = x_hat * state.gain + state.bias
    return out, BatchNormCache(x_hat, inv_std, state.gain.copy(), training)


def batchnorm_backward(grad_out, cache: BatchNormCache | None):
    """Exact gradients of :func:`batchnorm_forward`.

    Returns ``(grad_in, grad_gain, grad_bias)``.
    """
    if cache is None:
        raise ValueError("batchnorm_backward needs the forward cache")
    g = as_matrix(grad_out, "grad_out")
    if g.shape != cache.x_hat.shape:
        raise ShapeError(f"grad shape {g.shape} != forward shape {cache.x_hat.shape}")
    grad_gain = np.sum(g * cache.x_hat, axis=0)
    grad_bias = np.sum(g, axis=0)
    g_hat = g * cache.gain
    if not cache.training:
        return g_hat * cache.inv_std, grad_gain, grad_bias
    n = g.shape[0]
    grad_in = (cache.inv_std / n) * (
        n * g_hat - g_hat.sum(axis=0) - cache.x_hat * np.sum(g_hat * cache.x_hat, axis=0)
    )
    return grad_in, grad_gain, grad_bias
