"""
Polyak averaging across a reestimation
======================================

Reestimation replaces the codebook wholesale. An exponential average of
parameters taken across that boundary blends the old codewords into the
new ones, so the averaged model briefly quantizes worse than the live
one. Once reestimation stops the average catches up.
"""

from robustvq import ExperimentConfig, make_synthetic
from robustvq.experiment import build_state, evaluate
from robustvq.trainer import train_step

cfg = ExperimentConfig(method="bn_reest_lr", polyak_decay=0.99, iterations=1600)
data = make_synthetic(cfg.task, cfg.seed)
state = build_state(cfg, data)
n = data.x_train.shape[0]
while state.iteration < cfg.iterations:
    idx = state.rng.integers(0, n, size=cfg.batch_size)
    train_step(state, data.x_train[idx], data.y_train[idx])
    if state.iteration % 200 == 0:
        live = evaluate(state, data, cfg, state.iteration, raw=True)
        avg = evaluate(state, data, cfg, state.iteration, raw=False)
        if live.bpd is not None and live.perplexity is not None:
            print(f"it {state.iteration:5d}  live bpd {live.bpd:.3f}  averaged bpd {avg.bpd:.3f}")
