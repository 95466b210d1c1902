"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import chi2, spearmanr

from robustvq.checks import REFERENCE_NELBO_ROWS
from robustvq.clustering import Reservoir, kmeanspp_seed, lloyd, quantization_cost, reservoir_update
from robustvq.config import PRESETS, ExperimentConfig
from robustvq.experiment import rows_to_csv, run_experiment, scaling_sweep
from robustvq.metrics import nelbo_uniform, nelbo_unigram
from robustvq.models import VQModel, full_backward, mlp, model_forward
from robustvq.normalization import BatchNormState, batchnorm_backward, batchnorm_forward
from robustvq.numerics import finite_diff_grad, make_rng, rel_error
from robustvq.quantizer import (
    Codebook,
    QuantizerConfig,
    codebook_grad,
    nearest_code,
    perplexity,
    quantize,
    straight_through_backward,
    used_tokens,
)
from robustvq.trainer import EmaState, OptimConfig, ema_codebook_update, sgd_codebook_update


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}")
    return emit


def test_criterion_1_pinned_ema_equals_sgd(report):
    t0 = time.perf_counter()
    rng = make_rng(101)
    words = rng.standard_normal((8, 4))
    cb_sgd, cb_ema = Codebook(words.copy()), Codebook(words.copy())
    ema = EmaState.init_from(cb_ema, discount=0.9)
    opt = OptimConfig(lr=0.05, codebook_lr_mult=1.0)
    worst = 0.0
    for _ in range(100):
        e = rng.standard_normal((1, 4)) * 2
        idx = rng.integers(0, 8, size=1)
        sgd_codebook_update(cb_sgd, codebook_grad(e, idx, cb_sgd), opt)
        ema_codebook_update(ema, e, idx, cb_ema, pin_counts=True)
        worst = max(worst, float(np.abs(cb_sgd.words - cb_ema.words).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 1
    report(1, ok, f"max |w_sgd - w_ema| = {worst:.2e} over 100 steps (tol 1e-10), {elapsed:.3f}s")
    assert ok


def test_criterion_2_nelbo_arithmetic(report):
    t0 = time.perf_counter()
    worst = 0.0
    for b, pplx, uni, unig in REFERENCE_NELBO_ROWS:
        worst = max(worst, abs(nelbo_uniform(b, 4096, 128) - uni), abs(nelbo_unigram(b, pplx, 128) - unig))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 1
    report(2, ok, f"max deviation {worst:.5f} bits/dim over {len(REFERENCE_NELBO_ROWS)} rows (tol 0.001)")
    assert ok


def _st_instance(rng):
    n, d = int(rng.integers(2, 10)), int(rng.integers(1, 6))
    e, q, c = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, d))
    gamma = float(rng.uniform(0.05, 1.0))

    def f(x):
        return np.sum(c * x) + gamma * np.sum((x - q) ** 2) / n

    return rel_error(straight_through_backward(c, e, q, gamma), finite_diff_grad(f, e))


def _codebook_instance(rng):
    n, d, K = int(rng.integers(2, 12)), int(rng.integers(1, 6)), int(rng.integers(2, 9))
    cb = Codebook(rng.standard_normal((K, d)))
    e = rng.standard_normal((n, d))
    idx = nearest_code(e, cb).indices[:, 0]

    def f(w):
        return np.sum((e - w[idx]) ** 2) / n

    return rel_error(codebook_grad(e, idx, cb), finite_diff_grad(f, cb.words))


def _bn_instance(rng):
    n, d = int(rng.integers(3, 10)), int(rng.integers(1, 6))
    x = rng.standard_normal((n, d)) * rng.uniform(0.5, 3) + rng.standard_normal(d)
    c = rng.standard_normal((n, d))
    gain, bias = rng.uniform(0.5, 2.0, d), rng.standard_normal(d)

    def fresh():
        st = BatchNormState.create(d)
        st.gain, st.bias = gain.copy(), bias.copy()
        return st

    _, cache = batchnorm_forward(x, fresh(), True)
    gx, gg, gb = batchnorm_backward(c, cache)
    errs = [rel_error(gx, finite_diff_grad(lambda v: np.sum(c * batchnorm_forward(v, fresh(), True)[0]), x))]
    for arr, g in ((gain, gg), (bias, gb)):
        def f(v, arr=arr):
            old = arr.copy()
            arr[...] = v
            try:
                return np.sum(c * batchnorm_forward(x, fresh(), True)[0])
            finally:
                arr[...] = old
        errs.append(rel_error(g, finite_diff_grad(f, arr.copy())))
    return max(errs)


def _model_instance(rng):
    task = "autoencode" if rng.random() < 0.5 else "classify"
    d_in, d, levels, C, n = 4, 4, 3, 5, 6
    model = VQModel(mlp([d_in, 5, d], rng), mlp([d, 5, d_in * levels if task == "autoencode" else C], rng),
                    task, levels, None, [Codebook(rng.standard_normal((4, d)))], QuantizerConfig())
    y = rng.integers(0, levels, size=(n, d_in))
    x = y - 1.0 + 0.1 * rng.standard_normal((n, d_in))
    t = y if task == "autoencode" else rng.integers(0, C, size=n)
    _, cache = model_forward(model, x, t, quantize_on=False)
    worst = 0.0
    for name, g in full_backward(model, cache).items():
        arr = model.params()[name]
        orig = arr.copy()

        def f(v):
            arr[...] = v
            try:
                return model_forward(model, x, t, quantize_on=False)[0].total
            finally:
                arr[...] = orig

        worst = max(worst, rel_error(g, finite_diff_grad(f, orig)))
    return worst


def test_criterion_3_gradients(report):
    t0 = time.perf_counter()
    rng = make_rng(303)
    results = {}
    for label, fn in (("straight-through", _st_instance), ("codebook", _codebook_instance),
                      ("batch norm", _bn_instance), ("full model", _model_instance)):
        results[label] = max(fn(rng) for _ in range(20))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-6 for v in results.values()) and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in results.items())
    report(3, ok, f"max relative error over 20 instances each: {detail} (tol 1e-6), {elapsed:.1f}s")
    assert ok


def test_criterion_4_reestimation_raises_usage(report):
    t0 = time.perf_counter()
    finals = {}
    for method in ("vanilla", "bn_reest_lr"):
        finals[method] = [run_experiment(ExperimentConfig(method=method, K=64, seed=s))[-1].perplexity
                          for s in range(5)]
    elapsed = time.perf_counter() - t0
    van, reest = np.median(finals["vanilla"]), np.median(finals["bn_reest_lr"])
    ratio = reest / van
    ok = ratio >= 1.5 and elapsed < 300
    report(4, ok, f"median perplexity vanilla {van:.1f}, bn_reest_lr {reest:.1f}, "
                  f"ratio {ratio:.2f} (need >= 1.5), {elapsed:.0f}s")
    assert ok


def test_criterion_5_scaling_collapse(report):
    t0 = time.perf_counter()
    scales = [0.001, 0.01, 0.1, 1, 10, 100]
    res = scaling_sweep(scales, ExperimentConfig())
    used = [r["used_tokens"] for r in res]
    elapsed = time.perf_counter() - t0
    rho = spearmanr(np.log10(scales), used).statistic
    ok = used[-1] <= 0.2 * used[1] and rho <= 0 and elapsed < 120
    report(5, ok, f"used tokens {used}; used(100)/used(0.01) = {used[-1] / used[1]:.2f} (need <= 0.2), "
                  f"Spearman {rho:.2f} (need <= 0), {elapsed:.0f}s")
    assert ok


def test_criterion_6_clustering_oracles(report):
    t0 = time.perf_counter()
    rng = make_rng(606)
    cap, n, trials = 8, 40, 20_000
    stream = np.arange(n, dtype=float)[:, None]
    counts = np.zeros(n)
    for _ in range(trials):
        res = Reservoir(cap, 1)
        cut = int(rng.integers(0, n + 1))
        reservoir_update(res, stream[:cut], rng)
        reservoir_update(res, stream[cut:], rng)
        counts[res.items[:, 0].astype(int)] += 1
    p = cap / n
    stat = np.sum((counts - trials * p) ** 2) / (trials * p * (1 - p) * n / (n - 1))
    pval = float(chi2.sf(stat, n - 1))

    centers = rng.uniform(-20, 20, size=(16, 2))
    pts = centers[rng.integers(0, 16, 2000)] + rng.standard_normal((2000, 2))
    pp, uni = [], []
    for _ in range(20):
        pp.append(quantization_cost(pts, kmeanspp_seed(pts, 16, rng)))
        uni.append(quantization_cost(pts, pts[rng.choice(len(pts), 16, replace=False)]))

    monotone = True
    for i in range(20):
        m, d, K = int(rng.integers(20, 300)), int(rng.integers(1, 6)), int(rng.integers(2, 12))
        x = rng.standard_normal((m, d))
        hist = []
        lloyd(x, x[rng.choice(m, K, replace=False)], max_iters=50, tol=0.0, history=hist)
        monotone &= all(b <= a + 1e-12 * max(1.0, a) for a, b in zip(hist, hist[1:]))
    elapsed = time.perf_counter() - t0
    ok = pval > 1e-3 and np.median(pp) <= np.median(uni) and monotone and elapsed < 30
    report(6, ok, f"reservoir chi-square p = {pval:.3f} (need > 0.001); k-means++ median cost "
                  f"{np.median(pp):.0f} vs uniform {np.median(uni):.0f}; Lloyd monotone on 20 instances: "
                  f"{monotone}; {elapsed:.1f}s")
    assert ok


def test_criterion_7_determinism(report, tmp_path):
    short = dict(iterations=150, eval_every=25, m_init=40, m_reestim=80, r_reestim=20, polyak_decay=0.9)
    mismatches = []
    for method in sorted(PRESETS):
        cfg = ExperimentConfig(method=method, **short)
        a = tmp_path / f"{method}_a"
        b = tmp_path / f"{method}_b"
        run_experiment(cfg, a)
        run_experiment(cfg, b)
        name = f"{method}_autoencode_seed0.csv"
        full = (a / name).read_bytes()
        if full != (b / name).read_bytes():
            mismatches.append(f"{method} rerun")
        # checkpoint inside the reestimation window, between two reestimations
        ckpt = tmp_path / f"{method}.npz"
        run_experiment(cfg, checkpoint_at=70, checkpoint_path=ckpt, stop_at=70)
        c = tmp_path / f"{method}_c"
        run_experiment(cfg, c, resume_from=ckpt)
        if (c / name).read_bytes() != full:
            mismatches.append(f"{method} resume")
    ok = not mismatches
    report(7, ok, f"{len(PRESETS)} presets, rerun and resume at iteration 70: "
                  f"{'all byte-identical' if ok else 'mismatch in ' + ', '.join(mismatches)}")
    assert ok


def test_criterion_8_quantizer_invariants(report):
    t0 = time.perf_counter()
    rng = make_rng(808)
    failures = []
    cases = 1000
    for case in range(cases):
        K, d, n = int(rng.integers(1, 17)), int(rng.integers(1, 6)), int(rng.integers(1, 30))
        words = rng.integers(-4, 5, size=(K, d)).astype(float) if case % 2 else rng.standard_normal((K, d))
        cb = Codebook(words)
        e = rng.standard_normal((n, d)) * rng.uniform(0.1, 5)
        q, a = quantize(e, [cb], QuantizerConfig())
        idx = a.indices[:, 0]
        q2, a2 = quantize(q, [cb], QuantizerConfig())
        if not np.array_equal(q2, q):
            failures.append(f"idempotence case {case}")
        d2 = np.array([[np.sum((e[i] - w) ** 2) for w in words] for i in range(n)])
        if np.any(d2[np.arange(n), idx] > d2.min(axis=1)):
            failures.append(f"optimality case {case}")
        # ties: the first minimizer wins, every time
        ties = words[rng.integers(0, K, size=n)]
        t_idx = nearest_code(ties, cb).indices[:, 0]
        first = np.array([np.flatnonzero(np.all(words == t, axis=1))[0] for t in ties])
        if not np.array_equal(t_idx, first) or not np.array_equal(nearest_code(ties, cb).indices[:, 0], t_idx):
            failures.append(f"tie-break case {case}")
        h = a.histograms[0]
        p = perplexity(h)
        if not (1 - 1e-12 <= p <= K * (1 + 1e-12)):
            failures.append(f"perplexity range case {case}")
        if used_tokens(h) < math.ceil(p - 1e-9):
            failures.append(f"used tokens case {case}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10
    report(8, ok, f"{cases} random cases, {len(failures)} violations, {elapsed:.1f}s")
    assert ok, failures[:5]


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
