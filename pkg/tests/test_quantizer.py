import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustvq.errors import ConfigError, ShapeError
from robustvq.numerics import finite_diff_grad, make_rng, rel_error
from robustvq.quantizer import (
    Codebook,
    QuantizerConfig,
    UsageHistogram,
    codebook_grad,
    init_codebook,
    nearest_code,
    perplexity,
    quantize,
    straight_through_backward,
    used_tokens,
    vq_loss,
)

CB2 = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))


class TestNearestCode:
    def test_closer_codeword(self):
        assert nearest_code([[0.9, 0.8]], CB2).indices[0, 0] == 1

    def test_exact_match(self):
        rng = make_rng(0)
        cb = Codebook(rng.standard_normal((6, 3)))
        a = nearest_code(cb.words[[4]], cb)
        assert a.indices[0, 0] == 4

    def test_tie_goes_to_lowest_index(self):
        assert nearest_code([[0.5, 0.5]], CB2).indices[0, 0] == 0
        dup = Codebook(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
        assert nearest_code([[0.0, 0.1]], dup).indices[0, 0] == 1

    def test_histogram(self):
        a = nearest_code([[0.0, 0.1], [1.0, 0.9], [0.9, 1.0]], CB2)
        assert a.histograms[0].counts.tolist() == [1, 2]
        assert a.one_hot_counts.total == 3

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            nearest_code([[0.0, 0.0, 0.0]], CB2)


class TestQuantize:
    def test_single_head_is_gather(self):
        rng = make_rng(1)
        cb = Codebook(rng.standard_normal((8, 4)))
        e = rng.standard_normal((10, 4))
        q, a = quantize(e, [cb], QuantizerConfig())
        np.testing.assert_array_equal(q, cb.words[nearest_code(e, cb).indices[:, 0]])
        assert a.indices.shape == (10, 1)

    def test_two_heads_exact_blocks(self):
        cbs = [Codebook(np.array([[1.0, 2.0], [3.0, 4.0]])), Codebook(np.array([[5.0, 6.0], [7.0, 8.0]]))]
        x = np.array([[3.0, 4.0, 5.0, 6.0], [1.0, 2.0, 7.0, 8.0]])
        q, a = quantize(x, cbs, QuantizerConfig(num_heads=2))
        np.testing.assert_array_equal(q, x)
        assert a.indices.tolist() == [[1, 0], [0, 1]]

    def test_four_heads_match_independent_single_heads(self):
        rng = make_rng(2)
        cbs = [Codebook(rng.standard_normal((5, 2))) for _ in range(4)]
        x = rng.standard_normal((16, 8))
        q, a = quantize(x, cbs, QuantizerConfig(num_heads=4))
        expected = np.hstack([quantize(x[:, 2 * h:2 * h + 2], [cbs[h]], QuantizerConfig())[0]
                              for h in range(4)])
        np.testing.assert_array_equal(q, expected)
        assert all(h.total == 16 for h in a.histograms)

    def test_head_count_mismatch(self):
        with pytest.raises(ShapeError):
            quantize(np.zeros((2, 4)), [CB2], QuantizerConfig(num_heads=2))

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            quantize(np.zeros((2, 5)), [CB2, CB2], QuantizerConfig(num_heads=2))


class TestVqLoss:
    def test_zero_when_equal(self):
        x = np.ones((3, 2))
        lb = vq_loss(x, x, 1.5, 0.25)
        assert (lb.codebook, lb.commitment, lb.total) == (0.0, 0.0, 1.5)

    def test_arithmetic(self):
        lb = vq_loss([[1.0, 0.0]], [[0.0, 0.0]], 0.0, 0.25)
        assert (lb.codebook, lb.commitment, lb.total) == (1.0, 0.25, 1.25)

    def test_matches_scalar_loop(self):
        rng = make_rng(5)
        e, q = rng.standard_normal((9, 3)), rng.standard_normal((9, 3))
        sq = 0.0
        for i in range(9):
            for k in range(3):
                sq += (e[i, k] - q[i, k]) ** 2
        sq /= 9
        lb = vq_loss(e, q, 0.7, 0.3)
        assert lb.total == pytest.approx(0.7 + sq + 0.3 * sq, rel=1e-14)
        assert lb.total == lb.task + lb.codebook + lb.commitment

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            vq_loss(np.zeros((2, 2)), np.zeros((3, 2)), 0.0, 0.25)


class TestStraightThrough:
    def test_passthrough_when_equal(self):
        g = make_rng(0).standard_normal((4, 3))
        e = np.ones((4, 3))
        np.testing.assert_array_equal(straight_through_backward(g, e, e, 0.25), g)

    def test_commitment_only(self):
        delta = np.array([[0.3, -1.0]])
        out = straight_through_backward(np.zeros((1, 2)), delta, np.zeros((1, 2)), 0.25)
        np.testing.assert_allclose(out, 0.5 * delta)

    def test_gamma_zero_exact_copy(self):
        rng = make_rng(1)
        g, e, q = (rng.standard_normal((5, 2)) for _ in range(3))
        assert np.array_equal(straight_through_backward(g, e, q, 0.0), g)

    def test_matches_finite_differences(self):
        rng = make_rng(7)
        for _ in range(5):
            e, q, c = (rng.standard_normal((8, 4)) for _ in range(3))

            # task loss linear in the (identity-treated) quantizer output
            def f(x):
                return float(np.sum(c * x) + 0.25 * np.sum((x - q) ** 2) / 8)

            assert rel_error(straight_through_backward(c, e, q, 0.25), finite_diff_grad(f, e)) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            straight_through_backward(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 3)), 0.25)


class TestCodebookGrad:
    def test_hand_example(self):
        cb = Codebook(np.array([[0.0, 0.0], [5.0, 5.0]]))
        g = codebook_grad([[1.0, 0.0], [0.0, 1.0]], [0, 0], cb)
        np.testing.assert_allclose(g, [[-1.0, -1.0], [0.0, 0.0]])

    def test_unused_rows_zero(self):
        rng = make_rng(3)
        cb = Codebook(rng.standard_normal((6, 2)))
        g = codebook_grad(rng.standard_normal((4, 2)), [1, 1, 3, 3], cb)
        assert np.all(g[[0, 2, 4, 5]] == 0)

    def test_matches_finite_differences(self):
        rng = make_rng(11)
        for _ in range(5):
            cb = Codebook(rng.standard_normal((5, 4)))
            e = rng.standard_normal((8, 4))
            idx = nearest_code(e, cb).indices[:, 0]

            def f(w):
                return float(np.sum((e - w[idx]) ** 2) / 8)

            assert rel_error(codebook_grad(e, idx, cb), finite_diff_grad(f, cb.words)) < 1e-6

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            codebook_grad([[0.0, 0.0]], [2], CB2)


class TestUsage:
    def test_uniform_perplexity(self):
        assert perplexity(UsageHistogram(np.full(16, 5))) == pytest.approx(16.0, rel=1e-12)

    def test_point_mass(self):
        assert perplexity(UsageHistogram([0, 9, 0])) == pytest.approx(1.0)

    def test_two_way_split(self):
        assert perplexity(UsageHistogram([4, 4, 0, 0, 0])) == pytest.approx(2.0)

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError):
            perplexity(UsageHistogram.empty(4))

    def test_used_tokens(self):
        assert used_tokens(UsageHistogram(np.full(7, 2))) == 7
        assert used_tokens(UsageHistogram([0, 3, 0])) == 1
        assert used_tokens(UsageHistogram([3, 0, 5, 0])) == 2

    def test_capacity_bits(self):
        assert Codebook(np.zeros((4096, 2))).capacity_bits == 12.0


class TestInitCodebook:
    def test_zero_scale(self):
        assert np.all(init_codebook(4, 3, 0.0, make_rng(0)).words == 0)

    def test_row_norm_monte_carlo(self):
        # E|z| for z ~ N(0, I_d) is sqrt(2) Gamma((d+1)/2) / Gamma(d/2)
        d, scale, n = 6, 2.5, 10_000
        cb = init_codebook(n, d, scale, make_rng(1))
        norms = np.linalg.norm(cb.words, axis=1)
        mean_chi = math.sqrt(2) * math.exp(math.lgamma((d + 1) / 2) - math.lgamma(d / 2))
        sd = scale * math.sqrt(d - mean_chi ** 2)
        assert abs(norms.mean() - scale * mean_chi) < 3 * sd / math.sqrt(n)
        assert abs(norms.mean() - scale * math.sqrt(d)) < 0.1 * scale * math.sqrt(d)

    def test_same_seed_same_codebook(self):
        a = init_codebook(8, 3, 1.0, make_rng(5)).words
        b = init_codebook(8, 3, 1.0, make_rng(5)).words
        assert np.array_equal(a, b)


# --- properties -------------------------------------------------------------

small_instance = st.tuples(st.integers(1, 16), st.integers(1, 4), st.integers(1, 24), st.integers(0, 2**32 - 1))


@settings(max_examples=200, deadline=None)
@given(small_instance)
def test_idempotence_and_optimality(params):
    K, d, n, seed = params
    rng = make_rng(seed)
    cb = Codebook(rng.standard_normal((K, d)))
    e = rng.standard_normal((n, d)) * rng.uniform(0.1, 10)
    q, a = quantize(e, [cb], QuantizerConfig())
    q2, _ = quantize(q, [cb], QuantizerConfig())
    assert np.array_equal(q, q2)
    for i in range(n):
        best = min(float(np.sum((e[i] - w) ** 2)) for w in cb.words)
        assert float(np.sum((e[i] - q[i]) ** 2)) <= best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=32).filter(lambda c: sum(c) > 0))
def test_perplexity_bounds(counts):
    h = UsageHistogram(counts)
    p = perplexity(h)
    K = len(counts)
    assert 1 - 1e-12 <= p <= K * (1 + 1e-12)
    assert used_tokens(h) >= math.ceil(p - 1e-9)
    uniform = len(set(counts)) == 1
    assert math.isclose(p, K, rel_tol=1e-9) == uniform
