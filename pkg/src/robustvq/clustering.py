"""Reservoir sampling of encoder outputs and offline k-means for codebook reestimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .numerics import as_matrix, pairwise_sq_dists

__all__ = [
    "Reservoir",
    "reservoir_update",
    "kmeanspp_seed",
    "lloyd",
    "quantization_cost",
    "reestimate_codebook",
]


@dataclass
class Reservoir:
    """Uniform sample of at most ``capacity`` rows from a stream of d-dim vectors."""

    capacity: int
    d: int
    items: np.ndarray = field(default=None)
    seen: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("reservoir capacity must be >= 1")
        if self.items is None:
            self.items = np.empty((0, self.d))
        self.items = as_matrix(self.items, "reservoir items")

    def __len__(self) -> int:
        return self.items.shape[0]


def reservoir_update(res: Reservoir, batch, rng: np.random.Generator) -> Reservoir:
    """Feed ``batch`` (m, d) into ``res`` with Algorithm R; updates in place and returns it."""
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != res.d:
        raise ShapeError(f"batch has {batch.shape[1]} cols, reservoir expects {res.d}")
    m = batch.shape[0]
    if m == 0:
        return res
    free = min(res.capacity - len(res), m)
    if free > 0:
        res.items = np.vstack([res.items, batch[:free]])
        res.seen += free
    if free < m:
        # element arriving as the t-th item (1-based) draws a slot in [0, t)
        arrival = res.seen + 1 + np.arange(m - free)
        slots = rng.integers(0, arrival)
        for row, slot in zip(batch[free:], slots):
            if slot < res.capacity:
                res.items[slot] = row
        res.seen += m - free
    return res


def kmeanspp_seed(points, K: int, rng: np.random.Generator, first: int | None = None) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of K rows of ``points``.

    ``first`` forces the index of the first seed (used by tests); otherwise
    it is uniform. When every remaining point coincides with a chosen seed
    the next seed is drawn uniformly.
    """
    points = as_matrix(points, "points")
    m = points.shape[0]
    if m < K:
        raise ValueError(f"need at least K={K} points for seeding, got {m}")
    chosen = np.empty(K, dtype=np.int64)
    chosen[0] = rng.integers(m) if first is None else first
    d2 = pairwise_sq_dists(points, points[chosen[0]][None, :])[:, 0]
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            chosen[k] = rng.choice(m, p=d2 / total)
        else:
            chosen[k] = rng.integers(m)
        d2 = np.minimum(d2, pairwise_sq_dists(points, points[chosen[k]][None, :])[:, 0])
    return points[chosen].copy()


def quantization_cost(points, centroids) -> float:
    """Mean squared distance from each point to its nearest centroid."""
    return float(pairwise_sq_dists(points, centroids).min(axis=1).mean())


def lloyd(points, init, max_iters: int = 10, tol: float = 1e-6, history: list | None = None):
    """Lloyd refinement from ``init``.

    Stops when no centroid moves more than ``tol`` or after ``max_iters``
    rounds. An empty cluster takes the point currently farthest from its
    own centroid. If ``history`` is given, the cost before the first round
    and after each round is appended to it.
    """
    points = as_matrix(points, "points")
    centroids = as_matrix(init, "init").copy()
    if points.shape[1] != centroids.shape[1]:
        raise ShapeError("points and centroids differ in dimension")
    K = centroids.shape[0]
    for _ in range(max_iters):
        d2 = pairwise_sq_dists(points, centroids)
        labels = np.argmin(d2, axis=1)
        if history is not None and not history:
            history.append(float(d2[np.arange(len(labels)), labels].mean()))
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        new = centroids.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # distance of each point to its (updated) own centroid
            own = np.sum((points - new[labels]) ** 2, axis=1)
            for k in np.flatnonzero(~nonempty):
                far = int(np.argmax(own))
                new[k] = points[far]
                own[far] = 0.0
        shift = float(np.max(np.sqrt(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        if history is not None:
            history.append(quantization_cost(points, centroids))
        if shift < tol:
            break
    return centroids


def reestimate_codebook(res: Reservoir, K: int, rng: np.random.Generator, lloyd_iters: int = 10,
                        tol: float = 1e-6, columns: slice | None = None) -> np.ndarray:
    """k-means++ over the reservoir contents followed by Lloyd refinement.

    ``columns`` selects one head's block of the stored latents.
    """
    if len(res) < K:
        raise ValueError(
            f"reservoir holds {len(res)} samples but K={K} are required; "
            f"use a reservoir capacity of at least {K}"
        )
    pts = res.items if columns is None else res.items[:, columns]
    seeds = kmeanspp_seed(pts, K, rng)
    if lloyd_iters <= 0:
        return seeds
    return lloyd(pts, seeds, max_iters=lloyd_iters, tol=tol)
