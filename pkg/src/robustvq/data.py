"""Synthetic Gaussian-mixture datasets standing in for the real corpora."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import make_rng, pairwise_sq_dists

__all__ = ["Dataset", "make_synthetic", "levels_to_input"]


@dataclass
class Dataset:
    task: str
    x_train: np.ndarray  # encoder inputs in [-1, 1]
    y_train: np.ndarray  # integer levels (autoencode) or labels (classify)
    x_test: np.ndarray
    y_test: np.ndarray
    levels: int
    means: np.ndarray
    sigma: float
    labels_train: np.ndarray
    labels_test: np.ndarray

    @property
    def dims(self) -> int:
        return self.x_train.shape[1]

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]


def levels_to_input(levels_arr, levels: int) -> np.ndarray:
    return np.asarray(levels_arr, dtype=np.float64) * (2.0 / (levels - 1)) - 1.0


def _separated_means(rng, C, dims, sigma, min_sep):
    for _ in range(1000):
        means = rng.uniform(0.15, 0.85, size=(C, dims))
        d2 = pairwise_sq_dists(means, means)
        np.fill_diagonal(d2, np.inf)
        if np.sqrt(d2.min()) >= min_sep * sigma:
            return means
    raise ConfigError("could not place mixture means with the requested separation")


def make_synthetic(task: str, seed: int, components: int = 16, dims: int = 16, levels: int = 16,
                   sigma: float = 0.08, n_train: int = 4096, n_test: int = 1024,
                   min_sep: float = 6.0) -> Dataset:
    """Mixture of ``components`` isotropic Gaussians in [0, 1]^dims, rounded to
    ``levels`` values per dimension.

    Component means are at least ``min_sep * sigma`` apart. The same seed
    always yields the same train/test split.
    """
    if task not in ("autoencode", "classify"):
        raise ConfigError(f"unknown task {task!r}")
    rng = make_rng(seed)
    means = _separated_means(rng, components, dims, sigma, min_sep)

    def draw(n):
        labels = rng.integers(0, components, size=n)
        cont = means[labels] + sigma * rng.standard_normal((n, dims))
        lv = np.clip(np.rint(cont * (levels - 1)), 0, levels - 1).astype(np.int64)
        return lv, labels

    lv_tr, lab_tr = draw(n_train)
    lv_te, lab_te = draw(n_test)
    if task == "autoencode":
        y_tr, y_te = lv_tr, lv_te
    else:
        y_tr, y_te = lab_tr, lab_te
    return Dataset(task, levels_to_input(lv_tr, levels), y_tr, levels_to_input(lv_te, levels), y_te,
                   levels, means, sigma, lab_tr, lab_te)
