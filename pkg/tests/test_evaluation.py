"""Evaluation tests: mixture aggregation against the law of total variance,
single-exit equivalence, and the metric suite pinned to hand-computed
confusion-matrix and binning oracles."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from exitens.autodiff import astensor
from exitens.datasets import gen_data
from exitens.evaluation import (
    AggregatedPrediction,
    BatchPrediction,
    MetricReport,
    accuracy,
    aggregate_grid,
    cc_ece,
    compute_metrics,
    ece,
    evaluate_dataset,
    evaluate_input,
    f1_macro,
    gaussian_nll,
    mixture_mean_variance,
    mse,
    nll_classification,
)
from exitens.network import ModelConfig, PredictionGrid, build_network
from exitens.posterior import DepthPosterior, mask_top_k


def softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def classification_grid(raw_rows, n_inputs=1, depth=None):
    """Grid where every slot and every exit shares the same raw logits."""
    raw_rows = np.asarray(raw_rows, dtype=np.float64)
    depth = depth or 3
    block = np.tile(raw_rows, (1, n_inputs))
    outputs = [astensor(block.copy()) for _ in range(depth)]
    return PredictionGrid(n_inputs=n_inputs, raw_out_dim=raw_rows.shape[1],
                          task="classification", exit_outputs=outputs)


class TestMixtureMeanVariance:
    def test_law_of_total_variance_exact(self):
        mean, var = mixture_mean_variance([0.0, 2.0], [1.0, 1.0], [0.5, 0.5])
        assert float(mean) == 1.0
        assert float(var) == 2.0

    def test_single_component_identity(self):
        mean, var = mixture_mean_variance([[1.5]], [[0.3]], [1.0])
        assert float(mean[0]) == 1.5 and float(var[0]) == 0.3

    def test_variance_dominates_component_average(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            m = int(rng.integers(2, 6))
            means = rng.standard_normal(m)
            variances = rng.random(m) + 0.1
            w = rng.random(m)
            w = w / w.sum()
            _, var = mixture_mean_variance(means, variances, w)
            assert float(var) >= float((w * variances).sum()) - 1e-12

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="one weight per component"):
            mixture_mean_variance([0.0, 1.0], [1.0, 1.0], [1.0])
        with pytest.raises(ValueError, match="sum to 1"):
            mixture_mean_variance([0.0, 1.0], [1.0, 1.0], [0.4, 0.4])


class TestAggregateGrid:
    def test_identical_exits_return_common_prediction(self):
        raw = np.array([[2.0, -1.0, 0.5], [0.0, 0.0, 3.0]])
        grid = classification_grid(raw, n_inputs=2, depth=3)
        theta_star = mask_top_k(np.array([[1.0, 0.2, -0.3], [0.1, 0.9, 0.0]]), 2, 0.5)
        batch = aggregate_grid(grid, theta_star)
        for b in range(2):
            np.testing.assert_allclose(batch.probabilities[b], softmax(raw[b]), atol=1e-12)

    def test_probabilities_valid_distribution(self):
        rng = np.random.default_rng(6)
        outputs = [astensor(rng.standard_normal((5, 4))) for _ in range(3)]
        grid = PredictionGrid(n_inputs=2, raw_out_dim=2, task="classification",
                              exit_outputs=outputs)
        theta_star = mask_top_k(rng.standard_normal((2, 3)), 2, 0.7)
        batch = aggregate_grid(grid, theta_star)
        assert np.all(batch.probabilities >= 0.0)
        np.testing.assert_allclose(batch.probabilities.sum(axis=1), 1.0, atol=1e-10)

    def test_zero_weight_exits_never_read(self):
        """Masked-out exits may hold garbage without affecting the output."""
        raw = np.array([[1.0, 2.0]])
        clean = classification_grid(raw, n_inputs=1, depth=2)
        poisoned_outputs = [clean.exit_outputs[0],
                            astensor(np.full((1, 2), np.nan))]
        poisoned = PredictionGrid(n_inputs=1, raw_out_dim=2, task="classification",
                                  exit_outputs=poisoned_outputs)
        theta_star = np.array([[1.0, 0.0]])
        batch = aggregate_grid(poisoned, theta_star)
        np.testing.assert_allclose(batch.probabilities[0], softmax(raw[0]), atol=1e-12)

    def test_regression_mixture_exact(self):
        # two exits predicting N(0, 1) and N(2, 1); log variance 0 -> var 1
        outputs = [astensor(np.array([[0.0, 0.0]])), astensor(np.array([[2.0, 0.0]]))]
        grid = PredictionGrid(n_inputs=1, raw_out_dim=2, task="regression",
                              exit_outputs=outputs)
        batch = aggregate_grid(grid, np.array([[0.5, 0.5]]))
        assert float(batch.mean[0, 0]) == 1.0
        assert float(batch.variance[0, 0]) == 2.0

    def test_theta_star_validation(self):
        grid = classification_grid(np.array([[0.0, 1.0]]), n_inputs=1, depth=2)
        with pytest.raises(ValueError, match="shape"):
            aggregate_grid(grid, np.array([[1.0, 0.0, 0.0]]))
        with pytest.raises(ValueError, match="sum to 1"):
            aggregate_grid(grid, np.array([[0.9, 0.0]]))
        with pytest.raises(ValueError, match="nonnegative"):
            aggregate_grid(grid, np.array([[1.5, -0.5]]))


class TestEvaluateInput:
    def test_single_input_single_exit_matches_plain_forward(self):
        config = ModelConfig(n_inputs=1, max_exits=1, depth=3, width=6, in_dim=2,
                             out_dim=3, task="classification", seed=8)
        net = build_network(config)
        posterior = DepthPosterior(np.array([[0.2, 1.4, -0.5]]), 0.01)
        x = np.array([0.3, -1.1])
        predicted = evaluate_input(net, posterior, x, 1)
        grid = net.forward(x[None, :])
        expected = softmax(grid.entry(0, 1).data[0])
        np.testing.assert_allclose(predicted.probabilities, expected, atol=1e-12)

    def test_regression_prediction_fields(self):
        config = ModelConfig(n_inputs=2, max_exits=2, depth=2, width=4, in_dim=1,
                             out_dim=1, task="regression", seed=3)
        net = build_network(config)
        posterior = DepthPosterior(np.zeros((2, 2)), 0.5)
        predicted = evaluate_input(net, posterior, np.array([0.4]), 2)
        assert predicted.task == "regression"
        assert predicted.variance.shape == (1,)
        assert float(predicted.variance[0]) > 0.0

    def test_dimension_and_shape_errors(self):
        config = ModelConfig(n_inputs=1, max_exits=1, depth=2, width=4, in_dim=2,
                             out_dim=2, task="classification", seed=0)
        net = build_network(config)
        posterior = DepthPosterior(np.zeros((1, 2)), 0.5)
        with pytest.raises(ValueError, match="2 features"):
            evaluate_input(net, posterior, np.array([1.0, 2.0, 3.0]), 1)
        mismatched = DepthPosterior(np.zeros((2, 2)), 0.5)
        with pytest.raises(ValueError, match="does not match"):
            evaluate_input(net, mismatched, np.array([1.0, 2.0]), 1)


class TestAccuracy:
    def test_trivial_fractions(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.4, 0.6]])
        assert accuracy(probs, np.array([1, 2, 1, 2])) == 1.0
        assert accuracy(probs, np.array([2, 1, 2, 1])) == 0.0
        assert accuracy(probs, np.array([1, 2, 1, 1])) == 0.75

    def test_tie_prefers_lowest_class(self):
        assert accuracy(np.array([[0.5, 0.5]]), np.array([1])) == 1.0

    def test_label_validation(self):
        with pytest.raises(ValueError, match="1..2"):
            accuracy(np.array([[0.5, 0.5]]), np.array([3]))
        with pytest.raises(ValueError, match="empty"):
            accuracy(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


class TestF1Macro:
    def test_perfect_predictions(self):
        probs = np.array([[0.9, 0.1], [0.1, 0.9]])
        assert f1_macro(probs, np.array([1, 2])) == 1.0

    def test_all_predicted_one_class(self):
        """Binary, everything predicted class 1, targets half and half."""
        probs = np.tile([0.8, 0.2], (4, 1))
        value = f1_macro(probs, np.array([1, 1, 2, 2]))
        assert abs(value - 1.0 / 3.0) < 1e-12

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(10)
        probs = rng.random((30, 2))
        probs = probs / probs.sum(axis=1, keepdims=True)
        targets = rng.integers(1, 3, size=30)
        swapped = probs[:, ::-1]
        assert abs(f1_macro(probs, targets) - f1_macro(swapped, 3 - targets)) < 1e-12

    def test_absent_class_contributes_zero(self):
        probs = np.array([[0.9, 0.05, 0.05], [0.8, 0.1, 0.1]])
        value = f1_macro(probs, np.array([1, 1]), n_classes=3)
        assert abs(value - 1.0 / 3.0) < 1e-12


class TestEce:
    def test_confident_and_correct_is_zero(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ece(probs, np.array([1, 2])) == 0.0

    def test_confident_and_wrong_is_one(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ece(probs, np.array([2, 1])) == 1.0

    def test_hand_binned_case(self):
        """Confidences {0.6, 0.6, 0.9, 0.9}, correctness {1, 0, 1, 1}."""
        probs = np.array([[0.4, 0.6], [0.4, 0.6], [0.1, 0.9], [0.1, 0.9]])
        targets = np.array([2, 1, 2, 2])
        assert abs(ece(probs, targets) - 0.10) < 1e-12

    def test_range_on_random_inputs(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            probs = rng.random((40, 3))
            probs = probs / probs.sum(axis=1, keepdims=True)
            targets = rng.integers(1, 4, size=40)
            assert 0.0 <= ece(probs, targets) <= 1.0

    def test_bin_count_validation(self):
        with pytest.raises(ValueError, match="at least one bin"):
            ece(np.array([[1.0, 0.0]]), np.array([1]), n_bins=0)


class TestCcEce:
    def test_single_partition_equals_ece(self):
        probs = np.array([[0.6, 0.4], [0.9, 0.1], [0.7, 0.3]])
        targets = np.array([1, 2, 1])
        assert abs(cc_ece(probs, targets) - ece(probs, targets)) < 1e-15

    def test_perfect_predictions_zero(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert cc_ece(probs, np.array([1, 2])) == 0.0

    def test_two_partition_hand_case(self):
        probs = np.array([[0.6, 0.4], [0.9, 0.1], [0.2, 0.8], [0.3, 0.7]])
        targets = np.array([1, 2, 2, 1])
        # predicted-1 partition: gaps 0.4 and 0.9; predicted-2: gaps 0.2, 0.7
        expected = 0.5 * (0.5 * 0.4 + 0.5 * 0.9) + 0.5 * (0.5 * 0.2 + 0.5 * 0.7)
        assert abs(cc_ece(probs, targets) - expected) < 1e-12
        assert abs(expected - 0.55) < 1e-12


class TestRegressionMetrics:
    def test_uniform_classifier_nll(self):
        probs = np.full((6, 4), 0.25)
        targets = np.array([1, 2, 3, 4, 1, 2])
        assert abs(nll_classification(probs, targets) - math.log(4.0)) < 1e-10

    def test_certain_classifier_nll_zero(self):
        assert nll_classification(np.array([[1.0, 0.0]]), np.array([1])) == 0.0

    def test_gaussian_nll_standard_normal(self):
        value = gaussian_nll(np.array([[0.7]]), np.array([[1.0]]), np.array([[0.7]]))
        assert abs(value - 0.9189385332046727) < 1e-10

    def test_mse_values(self):
        assert mse(np.array([[0.5], [1.0]]), np.array([[0.5], [1.0]])) == 0.0
        assert mse(np.array([[0.0], [1.0]]), np.array([[0.5], [0.5]])) == 0.25

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            mse(np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ValueError, match="empty"):
            gaussian_nll(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)))


class TestComputeMetrics:
    def test_classification_report_fields(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        batch = BatchPrediction("classification", probabilities=probs)
        report = compute_metrics(batch, np.array([1, 2]))
        assert report.accuracy == 1.0
        assert report.mse is None and report.gaussian_nll is None
        record = report.to_record()
        assert set(record) == {"task", "accuracy", "f1_macro", "ece", "cc_ece", "nll"}

    def test_regression_report_fields(self):
        batch = BatchPrediction("regression", mean=np.array([[0.5]]),
                                variance=np.array([[1.0]]))
        report = compute_metrics(batch, np.array([[0.5]]))
        assert report.mse == 0.0
        assert report.accuracy is None
        assert set(report.to_record()) == {"task", "gaussian_nll", "mse"}

    def test_permutation_invariance(self):
        rng = np.random.default_rng(14)
        probs = rng.random((50, 3))
        probs = probs / probs.sum(axis=1, keepdims=True)
        targets = rng.integers(1, 4, size=50)
        perm = rng.permutation(50)
        base = compute_metrics(BatchPrediction("classification", probabilities=probs), targets)
        shuffled = compute_metrics(
            BatchPrediction("classification", probabilities=probs[perm]), targets[perm])
        for name in ("accuracy", "f1_macro", "ece", "cc_ece", "nll"):
            assert abs(getattr(base, name) - getattr(shuffled, name)) < 1e-12

    def test_metric_range_validation(self):
        with pytest.raises(ValueError, match="accuracy"):
            MetricReport(task="classification", accuracy=1.5)


class TestEvaluateDataset:
    def test_end_to_end_classification(self):
        config = ModelConfig(n_inputs=2, max_exits=1, depth=2, width=4, in_dim=2,
                             out_dim=2, task="classification", seed=1)
        net = build_network(config)
        posterior = DepthPosterior(np.zeros((2, 2)), 0.5)
        data = gen_data("two_clusters", 30, 0.2, seed=5)
        result = evaluate_dataset(net, posterior, data, 1)
        assert result.prediction.probabilities.shape == (30, 2)
        np.testing.assert_array_equal(result.theta_star, posterior.masked(1))
        assert 0.0 <= result.metrics.accuracy <= 1.0

    def test_deterministic_across_calls(self):
        config = ModelConfig(n_inputs=1, max_exits=2, depth=2, width=4, in_dim=1,
                             out_dim=1, task="regression", seed=2)
        net = build_network(config)
        posterior = DepthPosterior(np.array([[0.3, -0.2]]), 0.4)
        data = gen_data("sinusoid_regression", 25, 0.05, seed=6)
        r1 = evaluate_dataset(net, posterior, data, 2)
        r2 = evaluate_dataset(net, posterior, data, 2)
        np.testing.assert_array_equal(r1.prediction.mean, r2.prediction.mean)
        assert r1.metrics.mse == r2.metrics.mse

    def test_feature_shape_errors(self):
        config = ModelConfig(n_inputs=1, max_exits=1, depth=1, width=4, in_dim=2,
                             out_dim=2, task="classification", seed=0)
        net = build_network(config)
        posterior = DepthPosterior(np.zeros((1, 1)), 0.5)
        bad = SimpleNamespace(features=np.zeros((4, 3)), targets=np.ones(4, dtype=np.int64))
        with pytest.raises(ValueError, match=r"must be \(n, 2\)"):
            evaluate_dataset(net, posterior, bad, 1)
        empty = SimpleNamespace(features=np.zeros((0, 2)), targets=np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError, match="empty dataset"):
            evaluate_dataset(net, posterior, empty, 1)


class TestPredictionTypes:
    def test_aggregated_prediction_validation(self):
        with pytest.raises(ValueError, match="needs probabilities"):
            AggregatedPrediction("classification")
        with pytest.raises(ValueError, match="sum to 1"):
            AggregatedPrediction("classification", probabilities=np.array([0.5, 0.2]))
        with pytest.raises(ValueError, match="strictly positive"):
            AggregatedPrediction("regression", mean=np.array([0.0]),
                                 variance=np.array([0.0]))

    def test_batch_row_round_trip(self):
        batch = BatchPrediction("regression", mean=np.array([[1.0], [2.0]]),
                                variance=np.array([[0.5], [0.6]]))
        assert batch.n_rows == 2
        row = batch.row(1)
        assert float(row.mean[0]) == 2.0 and float(row.variance[0]) == 0.6
