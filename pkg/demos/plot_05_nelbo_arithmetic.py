"""
Bits per dimension and the two NELBO variants
=============================================

A model's reconstruction cost in bits per dimension plus the cost of
transmitting its latents gives a NELBO. Under a uniform prior each latent
costs log2(K) bits. A unigram prior fitted to codeword frequencies costs
log2(perplexity) bits, which is never more.
"""

import math

from robustvq import bpd, nelbo_uniform, nelbo_unigram

nll_nats = 0.213 * 128 * math.log(2)  # per-example NLL of 128 dims
b = bpd(nll_nats, 128)
for pplx in [322, 1118, 2388, 4096]:
    print(f"bpd {b:.3f}  perplexity {pplx:5d}  uniform {nelbo_uniform(b, 4096, 128):.3f}  "
          f"unigram {nelbo_unigram(b, pplx, 128):.3f}")
