"""Vector-quantization bottleneck.

Nearest-codeword assignment, independent multi-head splitting, the
three-term VQ loss, the straight-through backward pass, the codebook
gradient and codebook usage statistics.

All loss terms use a batch mean, so the per-codeword gradient of the
codebook term is ``(1/n) * sum_j 2 (w_i - e_j)`` over the samples ``j``
assigned to codeword ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import as_matrix, pairwise_sq_dists

__all__ = [
    "Codebook",
    "QuantizerConfig",
    "UsageHistogram",
    "Assignment",
    "LossBreakdown",
    "nearest_code",
    "quantize",
    "vq_loss",
    "straight_through_backward",
    "codebook_grad",
    "perplexity",
    "used_tokens",
    "init_codebook",
]


@dataclass
class Codebook:
    """K codewords of dimension d, stored as a (K, d) array.

    ``words`` is mutated in place by the training rules.
    """

    words: np.ndarray

    def __post_init__(self):
        self.words = as_matrix(self.words, "codebook")
        if self.words.shape[0] < 1 or self.words.shape[1] < 1:
            raise ShapeError(f"codebook must be at least 1x1, got {self.words.shape}")

    @property
    def K(self) -> int:
        return self.words.shape[0]

    @property
    def d(self) -> int:
        return self.words.shape[1]

    @property
    def capacity_bits(self) -> float:
        return math.log2(self.K)

    def copy(self) -> "Codebook":
        return Codebook(self.words.copy())


@dataclass(frozen=True)
class QuantizerConfig:
    gamma_commit: float = 0.25
    num_heads: int = 1
    init_scale: float = 1.0

    def __post_init__(self):
        if self.gamma_commit < 0:
            raise ConfigError("gamma_commit must be nonnegative")
        if self.num_heads < 1:
            raise ConfigError("num_heads must be >= 1")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")

    def head_dim(self, latent_dim: int) -> int:
        if latent_dim % self.num_heads:
            raise ConfigError(
                f"num_heads={self.num_heads} does not divide latent dimension {latent_dim}"
            )
        return latent_dim // self.num_heads


@dataclass
class UsageHistogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def empty(cls, K: int) -> "UsageHistogram":
        return cls(np.zeros(K, dtype=np.int64))

    @classmethod
    def from_indices(cls, indices, K: int) -> "UsageHistogram":
        return cls(np.bincount(np.asarray(indices).reshape(-1), minlength=K))

    def __add__(self, other: "UsageHistogram") -> "UsageHistogram":
        return UsageHistogram(self.counts + other.counts)


@dataclass
class Assignment:
    """Codeword indices of shape (n, num_heads) and one usage histogram per head."""

    indices: np.ndarray
    histograms: list

    @property
    def one_hot_counts(self) -> UsageHistogram:
        """Usage pooled over heads (all heads must share K)."""
        total = self.histograms[0]
        for h in self.histograms[1:]:
            total = total + h
        return total


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    codebook: float
    commitment: float

    @property
    def total(self) -> float:
        return self.task + self.codebook + self.commitment


def nearest_code(latents, codebook: Codebook) -> Assignment:
    """Assign each row of ``latents`` to its nearest codeword.

    Ties go to the lowest index (``argmin`` returns the first minimum).
    """
    latents = as_matrix(latents, "latents")
    if latents.shape[1] != codebook.d:
        raise ShapeError(
            f"latent dimension {latents.shape[1]} != codeword dimension {codebook.d}"
        )
    idx = np.argmin(pairwise_sq_dists(latents, codebook.words), axis=1)
    return Assignment(idx[:, None], [UsageHistogram.from_indices(idx, codebook.K)])


def quantize(latents, codebooks, cfg: QuantizerConfig):
    """Split ``latents`` (n, D) into ``num_heads`` equal blocks and quantize each
    block with its own codebook.

    Returns ``(quantized, assignment)``.
    """
    latents = as_matrix(latents, "latents")
    if len(codebooks) != cfg.num_heads:
        raise ShapeError(f"expected {cfg.num_heads} codebooks, got {len(codebooks)}")
    d = cfg.head_dim(latents.shape[1])
    quantized = np.empty_like(latents)
    indices = np.empty((latents.shape[0], cfg.num_heads), dtype=np.int64)
    hists = []
    for h, cb in enumerate(codebooks):
        block = slice(h * d, (h + 1) * d)
        a = nearest_code(latents[:, block], cb)
        indices[:, h] = a.indices[:, 0]
        quantized[:, block] = cb.words[a.indices[:, 0]]
        hists.append(a.histograms[0])
    return quantized, Assignment(indices, hists)


def _check_same(a, b):
    a = as_matrix(a, "latents")
    b = as_matrix(b, "quantized")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def vq_loss(latents, quantized, task_loss: float, gamma_commit: float) -> LossBreakdown:
    """Forward value of the task + codebook + commitment objective.

    The codebook and commitment terms have the same forward value (the
    stop-gradient only changes which side receives gradient); the
    commitment term is scaled by ``gamma_commit``.
    """
    e, q = _check_same(latents, quantized)
    sq = float(np.sum((e - q) ** 2)) / e.shape[0]
    return LossBreakdown(task=float(task_loss), codebook=sq, commitment=gamma_commit * sq)


def straight_through_backward(grad_wrt_quantized, latents, quantized, gamma_commit: float):
    """Gradient reaching the encoder output.

    The task gradient is copied across the quantizer unchanged and the
    commitment term adds ``2 * gamma * (e - q) / n``.
    """
    e, q = _check_same(latents, quantized)
    g = as_matrix(grad_wrt_quantized, "grad_wrt_quantized")
    if g.shape != e.shape:
        raise ShapeError(f"gradient shape {g.shape} != latent shape {e.shape}")
    if gamma_commit == 0:
        return g.copy()
    return g + (2.0 * gamma_commit / e.shape[0]) * (e - q)


def codebook_grad(latents, assignment_indices, codebook: Codebook) -> np.ndarray:
    """Gradient of the codebook loss term w.r.t. one codebook's words.

    ``assignment_indices`` is a length-n vector of codeword indices for
    ``latents`` (n, d). Unused codewords get a zero row.
    """
    e = as_matrix(latents, "latents")
    idx = np.asarray(assignment_indices).reshape(-1)
    if idx.shape[0] != e.shape[0]:
        raise ShapeError("one index per latent row required")
    if idx.size and (idx.min() < 0 or idx.max() >= codebook.K):
        raise IndexError(f"assignment index out of range for K={codebook.K}")
    n = e.shape[0]
    counts = np.bincount(idx, minlength=codebook.K).astype(np.float64)
    sums = np.zeros_like(codebook.words)
    np.add.at(sums, idx, e)
    return 2.0 * (counts[:, None] * codebook.words - sums) / n


def perplexity(usage: UsageHistogram) -> float:
    """exp(entropy) of the empirical codeword distribution."""
    total = usage.total
    if total <= 0:
        raise ValueError("perplexity of an empty histogram is undefined")
    p = usage.counts[usage.counts > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def used_tokens(usage: UsageHistogram) -> int:
    return int(np.count_nonzero(usage.counts))


def init_codebook(K: int, d: int, init_scale: float, rng: np.random.Generator) -> Codebook:
    """Standard-normal codewords multiplied by ``init_scale``."""
    if K < 1 or d < 1:
        raise ShapeError("K and d must be >= 1")
    return Codebook(init_scale * rng.standard_normal((K, d)))
