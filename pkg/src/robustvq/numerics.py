"""Dense float64 helpers, seeded RNG construction and a finite-difference checker.

Matrices are plain ``numpy.ndarray`` objects of dtype float64, row-major,
batch dimension first.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "as_matrix",
    "make_rng",
    "pairwise_sq_dists",
    "finite_diff_grad",
    "rel_error",
]


_CHUNK_ENTRIES = 1 << 22


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, raising ShapeError otherwise."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64). Same seed, same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def pairwise_sq_dists(a, b) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` (n, d) and ``b`` (K, d).

    Computed as a direct difference rather than the ``|a|^2 - 2ab + |b|^2``
    expansion, so exact ties and zero distances survive. Result is (n, K).
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: a has {a.shape[1]} cols, b has {b.shape[1]}")
    out = np.empty((a.shape[0], b.shape[0]))
    # bound the (rows, K, d) temporary to a few million entries
    step = max(1, _CHUNK_ENTRIES // max(1, b.shape[0] * b.shape[1]))
    for start in range(0, a.shape[0], step):
        diff = a[start:start + step, None, :] - b[None, :, :]
        out[start:start + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` may have any shape; the result has the same shape. ``f`` is called
    on perturbed copies, never on ``x`` itself.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near entry {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` used by gradient checks.

    Two all-zero arrays compare as 0.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale <= floor:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / scale)
