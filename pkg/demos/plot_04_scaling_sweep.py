"""
Codebook scale and collapse
===========================

The encoder is first trained with the bottleneck bypassed. Codebooks are
then drawn at several multiples of the encoder-output RMS and training
continues with quantization on. Codebooks far larger than the data
capture almost nothing: one or two codewords end up nearest to every
point and stay that way.
"""

from robustvq import ExperimentConfig, scaling_sweep

for r in scaling_sweep([0.001, 0.01, 0.1, 1, 10, 100], ExperimentConfig()):
    print(f"scale {r['scale']:7g}  used {r['used_tokens']:3d}  perplexity {r['perplexity']:6.2f}  "
          f"loss {r['task_loss']:.3f}")

# %%
# Very small scales collapse as well in this small model: the whole
# codebook sits inside one region of latent space, and codewords that lose
# the first few assignments never move again. Usage peaks near the data
# scale.
