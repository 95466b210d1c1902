"""
Nearest-codeword quantization
=============================

A codebook is a (K, d) array. Quantizing a batch picks, for every row,
the closest codeword; ties go to the lower index.
"""

import numpy as np

from robustvq import Codebook, QuantizerConfig, make_rng, perplexity, quantize, used_tokens

rng = make_rng(0)
cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0], [4.0, 0.0]]))
e = np.array([[0.1, 0.2], [0.9, 1.2], [3.0, 0.1], [0.5, 0.5]])
q, assignment = quantize(e, [cb], QuantizerConfig())
print("indices:", assignment.indices[:, 0])  # the last row is a tie between 0 and 1
print("quantized:\n", q)

# usage statistics: perplexity is exp(entropy) of the assignment histogram
hist = assignment.histograms[0]
print("counts", hist.counts, "perplexity", round(perplexity(hist), 3), "used", used_tokens(hist))

# %%
# Splitting the latent into equal blocks gives one codebook per head.
heads = [Codebook(rng.standard_normal((4, 2))) for _ in range(2)]
x = rng.standard_normal((5, 4))
q2, a2 = quantize(x, heads, QuantizerConfig(num_heads=2))
print("per-head indices:\n", a2.indices)
