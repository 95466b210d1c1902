"""Desk-scale experiments: single runs, the method ablation and the codebook scaling sweep."""

from __future__ import annotations

import copy
import logging
from pathlib import Path

import numpy as np

from .config import PRESETS, ExperimentConfig
from .data import Dataset, make_synthetic
from .io import load_checkpoint, save_checkpoint
from .metrics import CSV_HEADER, MetricsRow, bpd, nelbo_uniform, nelbo_unigram
from .models import VQModel, encode, forward_from_latents, mlp
from .normalization import BatchNormState
from .numerics import make_rng
from .quantizer import QuantizerConfig, init_codebook, perplexity, used_tokens
from .trainer import OptimConfig, TrainerConfig, TrainSchedule, TrainState, train_step

log = logging.getLogger(__name__)

__all__ = [
    "build_state",
    "evaluate",
    "rows_to_csv",
    "run_experiment",
    "ablation",
    "scaling_sweep",
    "SWEEP_HEADER",
]

SWEEP_HEADER = "scale,init_scale,used_tokens,perplexity,task_loss"


def build_state(cfg: ExperimentConfig, data: Dataset) -> TrainState:
    """Fresh model and training state for ``cfg``; all randomness flows from ``cfg.seed``."""
    flags = cfg.flags
    rng = make_rng(cfg.seed)
    out_dim = data.dims * data.levels if cfg.task == "autoencode" else data.num_classes
    encoder = mlp([data.dims, cfg.hidden, cfg.d], rng)
    head = mlp([cfg.d, cfg.hidden, out_dim], rng)
    qcfg = QuantizerConfig(cfg.gamma_commit, cfg.num_heads, cfg.init_scale)
    codebooks = None
    if flags.bottleneck:
        hd = qcfg.head_dim(cfg.d)
        codebooks = [init_codebook(cfg.K, hd, cfg.init_scale, rng) for _ in range(cfg.num_heads)]
    bn = BatchNormState.create(cfg.d) if flags.batch_norm else None
    model = VQModel(encoder, head, cfg.task, data.levels, bn, codebooks, qcfg)
    mult = cfg.codebook_lr_mult if flags.boost_codebook_lr else 1.0
    tcfg = TrainerConfig(
        rule=flags.rule,
        reestimate=flags.reestimate,
        ema_discount=cfg.ema_discount,
        lloyd_iters=cfg.lloyd_iters,
        reservoir_capacity=cfg.reservoir_capacity or None,
        polyak_decay=cfg.polyak_decay,
    )
    return TrainState(model, TrainSchedule(cfg.m_init, cfg.m_reestim, cfg.r_reestim),
                      OptimConfig(cfg.lr, mult), tcfg, rng)


def _dims_per_latent(cfg: ExperimentConfig, data: Dataset) -> float:
    return cfg.dims_per_latent or float(data.dims)


def evaluate(state: TrainState, data: Dataset, cfg: ExperimentConfig, iteration: int,
             raw: bool | None = None) -> MetricsRow:
    """Metrics on the held-out split.

    Uses Polyak-averaged parameters when averaging is on (unless ``raw``)
    and batch-norm running statistics. Usage statistics are pooled over
    the whole pass; with several heads, perplexity is the per-head mean and
    the unigram NELBO charges the sum of per-head log2 perplexities.
    """
    raw = cfg.eval_raw if raw is None else raw
    model = state.model
    live = {k: v.copy() for k, v in model.params().items()}
    model.load_params(state.eval_params(raw))
    try:
        quantize_on = model.codebooks is not None and not state.phase(max(iteration - 1, 0)).warmup
        e, enc_cache, bn_cache = encode(model, data.x_test, training=False)
        loss, cache = forward_from_latents(model, e, enc_cache, bn_cache, data.y_test, quantize_on)
    finally:
        model.load_params(live)
    row = MetricsRow(iteration=iteration, task_loss=loss.task)
    if cfg.task == "autoencode":
        row.bpd = bpd(loss.task, data.dims)
    if quantize_on:
        hists = cache.assignment.histograms
        pplx = [perplexity(h) for h in hists]
        row.perplexity = float(np.mean(pplx))
        row.used_tokens = int(sum(used_tokens(h) for h in hists))
        if row.bpd is not None:
            dpl = _dims_per_latent(cfg, data)
            K_total = float(cfg.K) ** cfg.num_heads
            row.nelbo_uniform = nelbo_uniform(row.bpd, K_total, dpl)
            row.nelbo_unigram = nelbo_unigram(row.bpd, float(np.prod(pplx)), dpl)
    return row


def rows_to_csv(rows) -> str:
    return CSV_HEADER + "\n" + "".join(r.to_csv() + "\n" for r in rows)


def _csv_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.method}_{cfg.task}_seed{cfg.seed}.csv"


def run_experiment(cfg: ExperimentConfig, out_dir=None, data: Dataset | None = None,
                   checkpoint_at: int | None = None, checkpoint_path=None,
                   resume_from=None, stop_at: int | None = None) -> list:
    """Train per ``cfg`` and evaluate every ``eval_every`` iterations.

    Returns the list of :class:`MetricsRow`; when ``out_dir`` is given the
    CSV is written there. ``checkpoint_at`` saves a checkpoint after that
    many iterations; ``resume_from`` continues a saved run; ``stop_at``
    ends training early (to simulate an interrupted run).
    """
    data = data or make_synthetic(cfg.task, cfg.seed, components=cfg.components, levels=cfg.levels)
    state = build_state(cfg, data)
    rows: list = []
    if resume_from is not None:
        lines, _ = load_checkpoint(resume_from, state)
        rows = [MetricsRow.from_csv(s) for s in lines]
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    n_train = data.x_train.shape[0]
    while state.iteration < end:
        idx = state.rng.integers(0, n_train, size=cfg.batch_size)
        train_step(state, data.x_train[idx], data.y_train[idx])
        done = state.iteration
        if done % cfg.eval_every == 0 or done == cfg.iterations:
            rows.append(evaluate(state, data, cfg, done))
            log.debug("%s it=%d %s", cfg.method, done, rows[-1])
        if checkpoint_at is not None and done == checkpoint_at:
            save_checkpoint(checkpoint_path, state, rows, cfg.to_text())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / _csv_name(cfg)).write_text(rows_to_csv(rows), encoding="utf-8")
    return rows


def ablation(cfg: ExperimentConfig, seeds, out_dir=None, methods=None) -> dict:
    """Run every preset (or ``methods``) for each seed; returns {(method, seed): rows}."""
    results = {}
    for method in methods or PRESETS:
        for seed in seeds:
            run_cfg = cfg.replace(method=method, seed=seed)
            results[(method, seed)] = run_experiment(run_cfg, out_dir)
    if out_dir is not None:
        lines = ["method,seed," + CSV_HEADER.split(",", 1)[1]]
        for (method, seed), rows in results.items():
            lines.append(f"{method},{seed}," + rows[-1].to_csv().split(",", 1)[1])
        (Path(out_dir) / "ablation_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return results


def _latent_rms(state: TrainState, data: Dataset) -> float:
    e, _, _ = encode(state.model, data.x_train, training=False)
    return float(np.sqrt(np.mean(e ** 2)))


def scaling_sweep(scales, cfg: ExperimentConfig, out_dir=None, warmup: int | None = None,
                  train_iters: int = 300) -> list:
    """Codebook-scale sweep.

    A single model is first trained without quantization for ``warmup``
    iterations (default ``cfg.m_init``). For each relative scale ``s`` the
    codebooks are then drawn with ``init_scale = s * rms(e(x))`` and the
    model trains with quantization on for ``train_iters`` iterations
    (default 300). Returns dicts with keys from
    ``SWEEP_HEADER``.
    """
    scales = list(scales)
    if any(not s > 0 for s in scales):
        raise ValueError("scales must be positive")
    data = make_synthetic(cfg.task, cfg.seed, components=cfg.components, levels=cfg.levels)
    warmup = cfg.m_init if warmup is None else warmup
    base = build_state(cfg.replace(method=_sweep_method(cfg)), data)
    n_train = data.x_train.shape[0]
    for _ in range(warmup):
        idx = base.rng.integers(0, n_train, size=cfg.batch_size)
        train_step(base, data.x_train[idx], data.y_train[idx], quantize=False)
    rms = _latent_rms(base, data)
    results = []
    for s in scales:
        state = copy.deepcopy(base)
        init_rng = make_rng(cfg.seed + 1)
        hd = state.model.qcfg.head_dim(cfg.d)
        for cb in state.model.codebooks:
            cb.words[...] = init_codebook(cfg.K, hd, s * rms, init_rng).words
        for _ in range(train_iters):
            idx = state.rng.integers(0, n_train, size=cfg.batch_size)
            train_step(state, data.x_train[idx], data.y_train[idx], quantize=True)
        e, enc_cache, bn_cache = encode(state.model, data.x_test, training=False)
        loss, cache = forward_from_latents(state.model, e, enc_cache, bn_cache, data.y_test, True)
        hists = cache.assignment.histograms
        results.append({
            "scale": float(s),
            "init_scale": s * rms,
            "used_tokens": int(sum(used_tokens(h) for h in hists)),
            "perplexity": float(np.mean([perplexity(h) for h in hists])),
            "task_loss": loss.task,
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = [SWEEP_HEADER] + [",".join(repr(r[k]) for k in SWEEP_HEADER.split(",")) for r in results]
        (out / f"sweep_{cfg.method}_seed{cfg.seed}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return results


def _sweep_method(cfg: ExperimentConfig) -> str:
    # the sweep needs a bottleneck and handles its own codebook init
    flags = cfg.flags
    if not flags.bottleneck or flags.reestimate:
        return "bn" if flags.batch_norm else "vanilla"
    return cfg.method
