"""Depth-posterior tests: tempered softmax, Gumbel top-K sampling checked
against Monte Carlo statistics, closed-form KL, and top-K masking."""

import math

import numpy as np
import pytest
from scipy import stats

from conftest import numeric_grad, relative_error

from exitens.autodiff import Tape, Tensor, backward, tsum, mul
from exitens.posterior import (
    DepthPosterior,
    active_exit_union,
    exit_probabilities,
    kl_to_uniform,
    mask_top_k,
    sample_exit_sets,
    sample_top_k,
)


class TestExitProbabilities:
    def test_zero_logits_uniform(self):
        theta = exit_probabilities(np.zeros((3, 4)), 0.37)
        np.testing.assert_allclose(theta, 0.25, atol=1e-15)

    def test_low_temperature_concentrates(self):
        theta = exit_probabilities(np.array([[1.0, 0.0, -1.0]]), 0.01)
        assert theta[0, 0] > 0.99

    def test_temperature_halving_doubles_effective_logits(self):
        theta = exit_probabilities(np.array([1.0, 0.0]), 0.5)
        np.testing.assert_allclose(
            theta, [0.8807970779778823, 0.11920292202211755], atol=1e-15)

    def test_tensor_input_stays_differentiable(self):
        logits = Tensor(np.array([[0.4, -0.2, 1.1]]), requires_grad=True)
        weights = np.array([[0.3, -1.2, 0.5]])

        def value():
            return float(tsum(mul(exit_probabilities(logits, 0.7), weights)).data)

        logits.zero_grad()
        with Tape():
            backward(tsum(mul(exit_probabilities(logits, 0.7), weights)))
        numeric = numeric_grad(value, logits)
        assert relative_error(logits.grad, numeric) < 1e-5


class TestSampleTopK:
    def test_k_equal_d_returns_full_set(self):
        rng = np.random.default_rng(0)
        row = np.array([2.0, -1.0, 0.5, 0.0])
        for _ in range(200):
            assert sorted(sample_top_k(row, 4, 0.5, rng)) == [0, 1, 2, 3]

    def test_indices_distinct_and_in_range(self):
        rng = np.random.default_rng(1)
        row = np.array([0.3, 0.1, -0.4, 0.9, 0.0])
        for _ in range(500):
            chosen = sample_top_k(row, 3, 0.8, rng)
            assert len(set(chosen)) == 3
            assert all(0 <= j < 5 for j in chosen)

    def test_k_out_of_range(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="1 <= k <= 3"):
            sample_top_k(np.zeros(3), 4, 1.0, rng)
        with pytest.raises(ValueError, match="1 <= k <= 3"):
            sample_top_k(np.zeros(3), 0, 1.0, rng)

    def test_k1_matches_categorical_frequencies(self):
        """Single-draw top-K equals categorical sampling from theta."""
        theta = np.array([0.6, 0.3, 0.1])
        row = np.log(theta)
        rng = np.random.default_rng(404)
        n = 100000
        counts = np.zeros(3)
        for _ in range(n):
            counts[sample_top_k(row, 1, 1.0, rng)[0]] += 1
        freqs = counts / n
        assert np.all(np.abs(freqs - theta) < 0.01)
        statistic = float(((counts - n * theta) ** 2 / (n * theta)).sum())
        assert statistic < stats.chi2.ppf(0.99, df=2)

    def test_identical_logits_symmetric_inclusion(self):
        rng = np.random.default_rng(7)
        n, depth, k = 100000, 4, 2
        inclusion = np.zeros(depth)
        for _ in range(n):
            for j in sample_top_k(np.zeros(depth), k, 1.0, rng):
                inclusion[j] += 1
        np.testing.assert_allclose(inclusion / n, k / depth, atol=0.01)

    def test_sample_exit_sets_one_per_row(self):
        rng = np.random.default_rng(3)
        logits = np.array([[3.0, 0.0], [0.0, 3.0]])
        sets = sample_exit_sets(logits, 1, 0.1, rng)
        assert len(sets) == 2
        assert all(len(s) == 1 for s in sets)


class TestKlToUniform:
    def test_uniform_row_is_zero(self):
        assert abs(kl_to_uniform(np.full(5, 0.2))) < 1e-15

    def test_one_hot_row_is_log_d(self):
        row = np.array([0.0, 1.0, 0.0, 0.0])
        assert abs(kl_to_uniform(row) - math.log(4.0)) < 1e-12

    def test_direct_evaluation(self):
        theta = np.array([0.7, 0.3])
        direct = float(np.sum(theta * np.log(theta * 2.0)))
        assert abs(kl_to_uniform(theta) - direct) < 1e-15
        assert abs(direct - 0.08228287850505178) < 1e-15

    def test_matrix_input_gives_per_row_values(self):
        rows = np.array([[0.25, 0.25, 0.25, 0.25], [1.0, 0.0, 0.0, 0.0]])
        out = kl_to_uniform(rows)
        np.testing.assert_allclose(out, [0.0, math.log(4.0)], atol=1e-12)

    def test_bounds_and_uniform_uniqueness(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            raw = rng.random(6) + 1e-3
            theta = raw / raw.sum()
            v = kl_to_uniform(theta)
            assert -1e-15 <= v <= math.log(6.0) + 1e-12
            if v < 1e-10:
                np.testing.assert_allclose(theta, 1.0 / 6.0, atol=1e-4)

    def test_differentiable_through_theta(self):
        logits = Tensor(np.array([[0.5, -0.3, 0.2]]), requires_grad=True)

        def value():
            return float(tsum(kl_to_uniform(exit_probabilities(logits, 0.6))).data)

        logits.zero_grad()
        with Tape():
            backward(tsum(kl_to_uniform(exit_probabilities(logits, 0.6))))
        assert relative_error(logits.grad, numeric_grad(value, logits)) < 1e-5


class TestMaskTopK:
    def test_k_equal_d_is_plain_softmax_bitwise(self):
        rng = np.random.default_rng(21)
        logits = rng.standard_normal((3, 5))
        masked = mask_top_k(logits, 5, 0.4)
        np.testing.assert_array_equal(masked, exit_probabilities(logits, 0.4))

    def test_k1_is_one_hot_argmax(self):
        logits = np.array([[0.3, 2.0, -1.0], [5.0, 1.0, 4.9]])
        masked = mask_top_k(logits, 1, 0.01)
        np.testing.assert_array_equal(masked, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])

    def test_worked_three_exit_case(self):
        masked = mask_top_k(np.array([3.0, 1.0, 2.0]), 2, 1.0)
        expected = math.e / (math.e + 1.0)
        np.testing.assert_allclose(masked, [[expected, 0.0, 1.0 - expected]], atol=1e-12)
        assert masked[0, 1] == 0.0

    def test_ties_keep_lowest_index(self):
        masked = mask_top_k(np.array([1.0, 1.0, 1.0]), 1, 1.0)
        np.testing.assert_array_equal(masked, [[1.0, 0.0, 0.0]])
        masked2 = mask_top_k(np.array([2.0, 1.0, 2.0, 1.0]), 2, 1.0)
        assert masked2[0, 1] == 0.0 and masked2[0, 3] == 0.0

    def test_rows_sum_to_one_and_ranking_preserved(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((6, 7))
        masked = mask_top_k(logits, 3, 0.5)
        np.testing.assert_allclose(masked.sum(axis=1), 1.0, atol=1e-12)
        for i in range(6):
            kept = np.flatnonzero(masked[i] > 0)
            assert kept.size == 3
            order_logits = np.argsort(-logits[i][kept], kind="stable")
            order_theta = np.argsort(-masked[i][kept], kind="stable")
            np.testing.assert_array_equal(order_logits, order_theta)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError, match="1 <= k <= 4"):
            mask_top_k(np.zeros((2, 4)), 5, 1.0)


class TestActiveExitUnion:
    def test_single_input_single_exit(self):
        theta_star = mask_top_k(np.array([[0.0, 3.0, 1.0]]), 1, 0.5)
        assert active_exit_union(theta_star) == (1,)

    def test_identical_rows_expose_k_exits(self):
        logits = np.tile(np.array([3.0, 0.0, 2.0, 1.0]), (3, 1))
        union = active_exit_union(mask_top_k(logits, 2, 1.0))
        assert union == (0, 2)

    def test_disjoint_argmaxes_union(self):
        logits = np.array([[0.0, 5.0, 0.0, 0.0, 0.0],
                           [0.0, 0.0, 0.0, 5.0, 0.0]])
        assert active_exit_union(mask_top_k(logits, 1, 1.0)) == (1, 3)

    def test_union_size_bound(self):
        rng = np.random.default_rng(30)
        for _ in range(50):
            n, depth = int(rng.integers(1, 4)), int(rng.integers(2, 6))
            k = int(rng.integers(1, depth + 1))
            union = active_exit_union(mask_top_k(rng.standard_normal((n, depth)), k, 0.3))
            assert len(union) <= min(depth, n * k)


class TestDepthPosterior:
    def test_probabilities_and_masked_agree_with_functions(self):
        logits = np.array([[0.2, -1.0, 0.8], [0.0, 0.0, 0.0]])
        posterior = DepthPosterior(logits, 0.25)
        np.testing.assert_array_equal(posterior.probabilities(),
                                      exit_probabilities(logits, 0.25))
        np.testing.assert_array_equal(posterior.masked(2), mask_top_k(logits, 2, 0.25))

    def test_validation(self):
        with pytest.raises(ValueError, match="2-D"):
            DepthPosterior(np.zeros(3), 1.0)
        with pytest.raises(ValueError, match="temperature"):
            DepthPosterior(np.zeros((1, 3)), 0.0)
