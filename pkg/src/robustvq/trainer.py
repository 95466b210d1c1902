"""Training rules for the VQ bottleneck.

Covers the warm-up / reestimation / fine-tune schedule, SGD codebook steps
with a separate learning-rate multiplier, the EMA codebook rule, Polyak
parameter averaging and the sequential training step that ties them
together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import Reservoir, reestimate_codebook, reservoir_update
from .errors import ConfigError, NumericalError, ShapeError
from .metrics import MetricsRow, bpd
from .models import VQModel, encode, forward_from_latents, full_backward
from .quantizer import Codebook, codebook_grad, perplexity, used_tokens

__all__ = [
    "TrainSchedule",
    "OptimConfig",
    "Phase",
    "schedule_step",
    "sgd_codebook_update",
    "EmaState",
    "ema_codebook_update",
    "polyak_average",
    "TrainerConfig",
    "TrainState",
    "train_step",
]


@dataclass(frozen=True)
class TrainSchedule:
    """Warm-up length, reestimation window and reestimation period, in iterations."""

    m_init: int = 200
    m_reestim: int = 1000
    r_reestim: int = 100

    def __post_init__(self):
        if self.m_init < 0 or self.m_reestim < 0:
            raise ConfigError("m_init and m_reestim must be nonnegative")
        if self.r_reestim < 1:
            raise ConfigError("r_reestim must be >= 1")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.05
    codebook_lr_mult: float = 10.0

    def __post_init__(self):
        if not self.lr > 0 or not self.codebook_lr_mult > 0:
            raise ConfigError("lr and codebook_lr_mult must be positive")

    @property
    def codebook_lr(self) -> float:
        return self.lr * self.codebook_lr_mult


@dataclass(frozen=True)
class Phase:
    warmup: bool
    reestimate_now: bool = False


def schedule_step(it: int, s: TrainSchedule) -> Phase:
    if it < 0:
        raise ValueError("iteration must be >= 0")
    if it < s.m_init:
        return Phase(warmup=True)
    return Phase(warmup=False,
                 reestimate_now=(it % s.r_reestim == 0 and it < s.m_init + s.m_reestim))


def sgd_codebook_update(codebook: Codebook, grad, cfg: OptimConfig) -> None:
    """In-place ``w -= lr * codebook_lr_mult * grad``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != codebook.words.shape:
        raise ShapeError(f"gradient shape {grad.shape} != codebook shape {codebook.words.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite codebook gradient")
    codebook.words -= cfg.codebook_lr * grad


@dataclass
class EmaState:
    counts: np.ndarray
    means: np.ndarray
    discount: float = 0.99

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ConfigError("EMA discount must lie in (0, 1)")

    @classmethod
    def init_from(cls, codebook: Codebook, discount: float = 0.99) -> "EmaState":
        """Unit counts and sums equal to the current codewords."""
        return cls(np.ones(codebook.K), codebook.words.copy(), discount)


def ema_codebook_update(state: EmaState, latents, indices, codebook: Codebook,
                        pin_counts: bool = False) -> None:
    """EMA codebook rule, applied in place to ``state`` and ``codebook``.

    Every codeword's running count and running sum decay by the discount;
    assigned codewords also take in their batch usage and sum. Codewords
    are then reset to sum / count. ``pin_counts`` holds the counts at 1,
    which turns the rule into a plain SGD step on the codebook loss.
    """
    e = np.asarray(latents, dtype=np.float64)
    idx = np.asarray(indices).reshape(-1)
    K = codebook.K
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise IndexError(f"assignment index out of range for K={K}")
    g = state.discount
    usage = np.bincount(idx, minlength=K).astype(np.float64)
    sums = np.zeros_like(codebook.words)
    np.add.at(sums, idx, e)
    if pin_counts:
        # counts fixed at 1: only used codewords move, as in a sparse SGD step
        used = usage > 0
        state.means[used] = state.means[used] * g + sums[used] * (1.0 - g)
        state.counts = np.ones(K)
    else:
        state.means = state.means * g + sums * (1.0 - g)
        state.counts = state.counts * g + usage * (1.0 - g)
    if not np.all(state.counts > 0):
        raise NumericalError("EMA usage count underflowed to zero; discount too aggressive")
    with np.errstate(over="ignore", invalid="ignore"):
        words = state.means / state.counts[:, None]
    if not np.all(np.isfinite(words)):
        raise NumericalError("non-finite codewords after EMA update")
    codebook.words[...] = words


def polyak_average(avg: dict, params: dict, decay: float) -> None:
    """In-place ``avg = decay * avg + (1 - decay) * params`` for every array."""
    if not 0 <= decay < 1:
        raise ValueError("decay must lie in [0, 1)")
    for name, p in params.items():
        a = avg[name]
        if a.shape != p.shape:
            raise ShapeError(f"shape mismatch for {name}: {a.shape} vs {p.shape}")
        a *= decay
        a += (1.0 - decay) * p


@dataclass(frozen=True)
class TrainerConfig:
    """Flags selecting the training rules for one run."""

    rule: str = "sgd"  # "sgd" or "ema"
    reestimate: bool = False
    ema_discount: float = 0.99
    lloyd_iters: int = 10
    reservoir_capacity: int | None = None  # default 64 * K
    polyak_decay: float = 0.0  # 0 disables averaging

    def __post_init__(self):
        if self.rule not in ("sgd", "ema"):
            raise ConfigError(f"unknown codebook rule {self.rule!r}")
        if not 0 <= self.polyak_decay < 1:
            raise ConfigError("polyak_decay must lie in [0, 1)")


@dataclass
class TrainState:
    """Everything the sequential training loop mutates."""

    model: VQModel
    schedule: TrainSchedule
    optim: OptimConfig
    cfg: TrainerConfig
    rng: np.random.Generator
    iteration: int = 0
    reservoir: Reservoir | None = None
    ema: list | None = None
    polyak: dict | None = None
    reestimations: int = field(default=0)

    def __post_init__(self):
        m = self.model
        if m.codebooks is not None:
            K = m.codebooks[0].K
            if self.reservoir is None and self.cfg.reestimate:
                cap = self.cfg.reservoir_capacity or 64 * K
                self.reservoir = Reservoir(cap, m.latent_dim)
            if self.ema is None and self.cfg.rule == "ema":
                self.ema = [EmaState.init_from(cb, self.cfg.ema_discount) for cb in m.codebooks]
        if self.polyak is None and self.cfg.polyak_decay > 0:
            self.polyak = {k: v.copy() for k, v in m.params().items()}

    def phase(self, it: int) -> Phase:
        if not self.cfg.reestimate:
            return Phase(warmup=False)
        return schedule_step(it, self.schedule)

    def eval_params(self, raw: bool = False) -> dict:
        """Parameters used for evaluation: Polyak averages if enabled, else live values."""
        live = self.model.params()
        if raw or self.polyak is None:
            return {k: v.copy() for k, v in live.items()}
        return {k: v.copy() for k, v in self.polyak.items()}


def _reestimate(state: TrainState) -> None:
    m = state.model
    d = m.qcfg.head_dim(m.latent_dim)
    for h, cb in enumerate(m.codebooks):
        cb.words[...] = reestimate_codebook(state.reservoir, cb.K, state.rng,
                                            state.cfg.lloyd_iters,
                                            columns=slice(h * d, (h + 1) * d))
        if state.ema is not None:
            state.ema[h] = EmaState.init_from(cb, state.cfg.ema_discount)
    state.reestimations += 1


def train_step(state: TrainState, x, targets, quantize: bool | None = None) -> MetricsRow:
    """One iteration: encode, reservoir update, phase-dependent quantization,
    loss, straight-through backward and parameter updates.

    ``quantize`` overrides the schedule (True: quantize without any
    reestimation, False: pass-through). Returns a row of training-batch
    statistics with the NELBO fields left empty.
    """
    m = state.model
    it = state.iteration
    phase = state.phase(it) if quantize is None else Phase(warmup=not quantize)
    bottleneck = m.codebooks is not None

    e, enc_cache, bn_cache = encode(m, x, training=True)
    if bottleneck and state.reservoir is not None:
        reservoir_update(state.reservoir, e, state.rng)
    if bottleneck and phase.reestimate_now:
        _reestimate(state)
    quantize_on = bottleneck and not phase.warmup
    loss, cache = forward_from_latents(m, e, enc_cache, bn_cache, targets, quantize_on)
    if not np.isfinite(loss.total):
        raise NumericalError(f"non-finite loss at iteration {it}")
    grads = full_backward(m, cache)

    params = m.params()
    for name, g in grads.items():
        params[name] -= state.optim.lr * g
    if quantize_on:
        d = m.qcfg.head_dim(m.latent_dim)
        for h, cb in enumerate(m.codebooks):
            block = e[:, h * d:(h + 1) * d]
            idx = cache.assignment.indices[:, h]
            if state.cfg.rule == "ema":
                ema_codebook_update(state.ema[h], block, idx, cb)
            else:
                sgd_codebook_update(cb, codebook_grad(block, idx, cb), state.optim)
    if state.polyak is not None:
        polyak_average(state.polyak, params, state.cfg.polyak_decay)
    state.iteration += 1

    row = MetricsRow(iteration=it, task_loss=loss.task)
    if m.task == "autoencode":
        row.bpd = bpd(loss.task, targets.shape[1])
    if quantize_on:
        hists = cache.assignment.histograms
        row.perplexity = float(np.mean([perplexity(h) for h in hists]))
        row.used_tokens = int(sum(used_tokens(h) for h in hists))
    return row
