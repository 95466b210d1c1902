"""
EMA codebook updates as online k-means
======================================

With counts pinned to one, the EMA rule with discount ``g`` is plain SGD
on the codebook loss with step ``(1 - g) / 2``. Here we check that
numerically and then show the adaptive per-codeword step the real EMA
rule uses.
"""

import numpy as np

from robustvq import Codebook, make_rng
from robustvq.quantizer import codebook_grad
from robustvq.trainer import EmaState, OptimConfig, ema_codebook_update, sgd_codebook_update

rng = make_rng(1)
start = rng.standard_normal((8, 4))
sgd_cb, ema_cb = Codebook(start.copy()), Codebook(start.copy())
ema = EmaState.init_from(ema_cb, discount=0.9)
opt = OptimConfig(lr=0.05, codebook_lr_mult=1.0)

for step in range(100):
    e = rng.standard_normal((1, 4))
    idx = rng.integers(0, 8, size=1)
    sgd_codebook_update(sgd_cb, codebook_grad(e, idx, sgd_cb), opt)
    ema_codebook_update(ema, e, idx, ema_cb, pin_counts=True)

print("max difference after 100 steps:", np.abs(sgd_cb.words - ema_cb.words).max())

# %%
# Without pinning, a codeword that keeps receiving points accumulates a growing
# count N, and the step toward each batch mean is the new mass over N:
# a learning rate that adapts to how much the codeword is used.
cb = Codebook(np.zeros((1, 1)))
state = EmaState.init_from(cb, discount=0.99)
for t in range(5):
    ema_codebook_update(state, np.ones((4, 1)), np.zeros(4, dtype=int), cb)
    print(f"step {t}: count {state.counts[0]:.3f} codeword {cb.words[0, 0]:.4f}")
