"""Fast invariant and oracle checks behind ``robustvq check``.

Each check returns ``(passed, detail)``. The full versions with stated
trial counts live in the test suite.
"""

from __future__ import annotations

import math
import sys

import numpy as np

from .clustering import Reservoir, lloyd, reservoir_update
from .metrics import nelbo_uniform, nelbo_unigram
from .models import mlp
from .normalization import BatchNormState, batchnorm_backward, batchnorm_forward
from .numerics import finite_diff_grad, make_rng, rel_error
from .quantizer import Codebook, codebook_grad, nearest_code, perplexity, straight_through_backward, used_tokens
from .trainer import EmaState, OptimConfig, ema_codebook_update, sgd_codebook_update

# (bpd, perplexity, uniform nelbo, unigram nelbo) for K=4096 and 128 data dims per latent
REFERENCE_NELBO_ROWS = [
    (0.213, 322, 0.307, 0.278),
    (0.216, 260, 0.309, 0.278),
    (0.212, 432, 0.306, 0.281),
    (0.207, 1118, 0.301, 0.287),
    (0.200, 2388, 0.294, 0.288),
    (0.200, 2446, 0.294, 0.288),
]


def check_ema_sgd_equivalence(steps: int = 100, seed: int = 0):
    rng = make_rng(seed)
    words = rng.standard_normal((8, 4))
    cb_sgd, cb_ema = Codebook(words.copy()), Codebook(words.copy())
    ema = EmaState.init_from(cb_ema, discount=0.9)
    opt = OptimConfig(lr=0.05, codebook_lr_mult=1.0)
    worst = 0.0
    for _ in range(steps):
        e = rng.standard_normal((1, 4))
        idx = nearest_code(e, cb_sgd).indices[:, 0]
        sgd_codebook_update(cb_sgd, codebook_grad(e, idx, cb_sgd), opt)
        ema_codebook_update(ema, e, idx, cb_ema, pin_counts=True)
        worst = max(worst, float(np.max(np.abs(cb_sgd.words - cb_ema.words))))
    return worst <= 1e-10, f"max |w_sgd - w_ema| = {worst:.2e}"


def check_nelbo_table():
    worst = 0.0
    for b, pplx, uni, unig in REFERENCE_NELBO_ROWS:
        worst = max(worst, abs(nelbo_uniform(b, 4096, 128) - uni),
                    abs(nelbo_unigram(b, pplx, 128) - unig))
    return worst <= 1e-3, f"max deviation {worst:.2e} bits/dim"


def check_gradients(seed: int = 0):
    rng = make_rng(seed)
    n, d = 8, 4
    worst = 0.0
    e = rng.standard_normal((n, d))
    cb = Codebook(rng.standard_normal((5, d)))
    a = nearest_code(e, cb).indices[:, 0]

    def cb_loss(w):
        return np.sum((e - w[a]) ** 2) / n

    worst = max(worst, rel_error(codebook_grad(e, a, cb), finite_diff_grad(cb_loss, cb.words)))

    q = cb.words[a]
    c = rng.standard_normal((n, d))

    def commit(x):
        return np.sum(c * x) + 0.25 * np.sum((x - q) ** 2) / n

    worst = max(worst, rel_error(straight_through_backward(c, e, q, 0.25), finite_diff_grad(commit, e)))

    state = BatchNormState.create(d)
    state.gain = rng.uniform(0.5, 1.5, d)

    def bn_loss(x):
        out, _ = batchnorm_forward(x, BatchNormState(state.gain, state.bias, np.zeros(d), np.ones(d)), True)
        return np.sum(c * out)

    _, cache = batchnorm_forward(e, state, True)
    worst = max(worst, rel_error(batchnorm_backward(c, cache)[0], finite_diff_grad(bn_loss, e)))

    stack = mlp([d, 6, 3], rng)
    g_out = rng.standard_normal((n, 3))

    def mlp_loss(x):
        return np.sum(g_out * stack.forward(x)[0])

    _, cache = stack.forward(e)
    worst = max(worst, rel_error(stack.backward(g_out, cache)[0], finite_diff_grad(mlp_loss, e)))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def check_quantizer_invariants(cases: int = 200, seed: int = 0):
    rng = make_rng(seed)
    for _ in range(cases):
        K = int(rng.integers(1, 17))
        d = int(rng.integers(1, 5))
        cb = Codebook(rng.standard_normal((K, d)))
        e = rng.standard_normal((int(rng.integers(1, 20)), d))
        a = nearest_code(e, cb)
        q = cb.words[a.indices[:, 0]]
        if not np.array_equal(cb.words[nearest_code(q, cb).indices[:, 0]], q):
            return False, "idempotence violated"
        d2 = ((e[:, None, :] - cb.words[None]) ** 2).sum(-1)
        if np.any(d2[np.arange(len(e)), a.indices[:, 0]] > d2.min(axis=1)):
            return False, "distance optimality violated"
        p = perplexity(a.histograms[0])
        if not (1 - 1e-12 <= p <= K + 1e-9) or used_tokens(a.histograms[0]) < math.ceil(p - 1e-9):
            return False, "perplexity bounds violated"
    return True, f"{cases} random cases"


def check_reservoir(trials: int = 4000, seed: int = 0):
    from scipy.stats import chisquare

    rng = make_rng(seed)
    cap, n = 4, 16
    counts = np.zeros(n)
    stream = np.arange(n, dtype=float)[:, None]
    for _ in range(trials):
        res = Reservoir(cap, 1)
        reservoir_update(res, stream, rng)
        counts[res.items[:, 0].astype(int)] += 1
    p = chisquare(counts).pvalue
    return p > 1e-3, f"chi-square p = {p:.3f}"


def check_lloyd_monotone(seed: int = 0):
    rng = make_rng(seed)
    pts = rng.standard_normal((200, 4))
    hist: list = []
    lloyd(pts, pts[:8], max_iters=50, tol=0.0, history=hist)
    ok = all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    return ok, f"{len(hist)} cost values"


CHECKS = [
    ("EMA with pinned counts == SGD with step (1-discount)/2", check_ema_sgd_equivalence),
    ("NELBO arithmetic reproduces reference rows", check_nelbo_table),
    ("analytic gradients match central differences", check_gradients),
    ("quantizer invariants", check_quantizer_invariants),
    ("reservoir inclusion is uniform", check_reservoir),
    ("Lloyd cost is non-increasing", check_lloyd_monotone),
]


def run_checks(stream=sys.stdout) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok = all_ok and bool(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=stream)
    return all_ok
