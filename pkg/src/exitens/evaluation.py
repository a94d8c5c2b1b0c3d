"""Evaluation-time aggregation and the metric suite.

A trained model answers with a mixture: every input slot repeats the same
sample, the masked posterior keeps each slot's top K exits, and the
surviving per-exit predictions are averaged with weights theta*/N.
Classification mixes post-softmax probabilities; regression follows the
law of total variance (mean of variances plus variance of means).

Datasets are evaluated in one full batch so that batch normalisation sees
population-scale statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import TASKS, MultiExitNet, PredictionGrid
from .objective import gaussian_log_density
from .posterior import DepthPosterior

__all__ = [
    "AggregatedPrediction",
    "BatchPrediction",
    "MetricReport",
    "EvalResult",
    "mixture_mean_variance",
    "aggregate_grid",
    "evaluate_input",
    "evaluate_dataset",
    "compute_metrics",
    "accuracy",
    "f1_macro",
    "ece",
    "cc_ece",
    "nll_classification",
    "gaussian_nll",
    "mse",
]

DEFAULT_BINS = 15


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class AggregatedPrediction:
    """One sample's final prediction: a probability vector, or a Gaussian
    mean/variance pair."""

    task: str
    probabilities: np.ndarray | None = None
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classification":
            p = self.probabilities
            if p is None:
                raise ValueError("classification prediction needs probabilities")
            if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-10:
                raise ValueError("probabilities must be nonnegative and sum to 1")
        else:
            if self.mean is None or self.variance is None:
                raise ValueError("regression prediction needs mean and variance")
            if np.any(self.variance <= 0):
                raise ValueError("regression variance must be strictly positive")


@dataclass
class BatchPrediction:
    """Aggregated predictions for a whole batch, one row per sample."""

    task: str
    probabilities: np.ndarray | None = None
    mean: np.ndarray | None = None
    variance: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        arr = self.probabilities if self.task == "classification" else self.mean
        return arr.shape[0]

    def row(self, index: int) -> AggregatedPrediction:
        if self.task == "classification":
            return AggregatedPrediction(self.task, probabilities=self.probabilities[index])
        return AggregatedPrediction(self.task, mean=self.mean[index],
                                    variance=self.variance[index])


def mixture_mean_variance(means, variances, weights) -> tuple[np.ndarray, np.ndarray]:
    """Moments of a Gaussian mixture along the leading component axis.

    variance = sum_m w_m*var_m + sum_m w_m*(mean_m - mean*)^2, the mean of
    the variances plus the variance of the means.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != means.shape[0]:
        raise ValueError(f"need one weight per component, got {w.shape} for {means.shape[0]}")
    if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-8:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    wb = w.reshape((-1,) + (1,) * (means.ndim - 1))
    mean_star = (wb * means).sum(axis=0)
    var_star = (wb * variances).sum(axis=0) + (wb * (means - mean_star) ** 2).sum(axis=0)
    return mean_star, var_star


def _check_theta_star(theta_star: np.ndarray, n_inputs: int, depth: int) -> np.ndarray:
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta_star.shape != (n_inputs, depth):
        raise ValueError(f"theta* must have shape ({n_inputs}, {depth}), got {theta_star.shape}")
    if np.any(theta_star < 0) or np.any(np.abs(theta_star.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("theta* rows must be nonnegative and sum to 1")
    return theta_star


def aggregate_grid(grid: PredictionGrid, theta_star) -> BatchPrediction:
    """Collapse the per-exit prediction grid into one prediction per row
    using weights theta*[i, j]/n_inputs; zero-weight exits are skipped."""
    n = grid.n_inputs
    theta_star = _check_theta_star(theta_star, n, grid.depth)
    weights, members = [], []
    for i in range(n):
        for j in range(grid.depth):
            w = theta_star[i, j] / n
            if w > 0:
                weights.append(w)
                members.append(grid.entry(i, j).data)
    w = np.asarray(weights)
    raw = np.stack(members)
    if grid.task == "classification":
        probs = _softmax_rows(raw)
        mixed = (w.reshape(-1, 1, 1) * probs).sum(axis=0)
        mixed = mixed / mixed.sum(axis=1, keepdims=True)
        return BatchPrediction("classification", probabilities=mixed)
    out_dim = grid.raw_out_dim // 2
    means = raw[:, :, :out_dim]
    variances = np.exp(raw[:, :, out_dim:])
    mean_star, var_star = mixture_mean_variance(means, variances, w)
    return BatchPrediction("regression", mean=mean_star, variance=var_star)


def _check_posterior(net: MultiExitNet, posterior: DepthPosterior) -> None:
    config = net.config
    if posterior.n_inputs != config.n_inputs or posterior.depth != config.depth:
        raise ValueError(
            f"posterior shape ({posterior.n_inputs}, {posterior.depth}) does not match "
            f"network ({config.n_inputs}, {config.depth})")


def evaluate_input(net: MultiExitNet, posterior: DepthPosterior, x, k: int) -> AggregatedPrediction:
    """Predict for a single sample by repeating it into every input slot."""
    _check_posterior(net, posterior)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.config.in_dim:
        raise ValueError(f"sample must have {net.config.in_dim} features, got {x.shape[0]}")
    x_star = np.tile(x, net.config.n_inputs)[None, :]
    grid = net.forward(x_star)
    batch = aggregate_grid(grid, posterior.masked(k))
    return batch.row(0)


@dataclass(frozen=True)
class MetricReport:
    """Task-appropriate metric values; unused fields stay None."""

    task: str
    accuracy: float | None = None
    f1_macro: float | None = None
    ece: float | None = None
    cc_ece: float | None = None
    nll: float | None = None
    gaussian_nll: float | None = None
    mse: float | None = None

    def __post_init__(self):
        for name in ("accuracy", "f1_macro", "ece", "cc_ece"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_record(self) -> dict:
        record = {"task": self.task}
        for name in ("accuracy", "f1_macro", "ece", "cc_ece", "nll", "gaussian_nll", "mse"):
            v = getattr(self, name)
            if v is not None:
                record[name] = v
        return record


def _check_labels(targets, n_classes: int) -> np.ndarray:
    labels = np.asarray(targets)
    if labels.size == 0:
        raise ValueError("empty dataset")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"class labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 1 or labels.max() > n_classes:
        raise ValueError(f"class labels must lie in 1..{n_classes}")
    return labels


def _predicted_labels(probabilities: np.ndarray) -> np.ndarray:
    # argmax keeps the first (lowest-index) class on ties
    return probabilities.argmax(axis=1) + 1


def accuracy(probabilities, targets) -> float:
    """Fraction of rows whose argmax class matches the 1-based target."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = _check_labels(targets, probabilities.shape[1])
    if probabilities.shape[0] != labels.shape[0]:
        raise ValueError("predictions and targets must have equal length")
    return float(np.mean(_predicted_labels(probabilities) == labels))


def f1_macro(probabilities, targets, n_classes: int | None = None) -> float:
    """Unweighted mean of per-class one-vs-all F1 scores.

    A class never predicted and never present contributes 0, keeping the
    score honest when classes are missing.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if n_classes is None:
        n_classes = probabilities.shape[1]
    labels = _check_labels(targets, n_classes)
    predicted = _predicted_labels(probabilities)
    scores = []
    for c in range(1, n_classes + 1):
        tp = int(np.sum((predicted == c) & (labels == c)))
        fp = int(np.sum((predicted == c) & (labels != c)))
        fn = int(np.sum((predicted != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def _bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    # right-closed equal-width bins on (0, 1]: bin m covers (m/M, (m+1)/M]
    idx = np.ceil(confidence * n_bins).astype(int) - 1
    return np.clip(idx, 0, n_bins - 1)


def ece(probabilities, targets, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error over equal-width confidence bins."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = _check_labels(targets, probabilities.shape[1])
    if n_bins < 1:
        raise ValueError(f"need at least one bin, got {n_bins}")
    confidence = probabilities.max(axis=1)
    correct = (_predicted_labels(probabilities) == labels).astype(np.float64)
    bins = _bin_index(confidence, n_bins)
    n = labels.shape[0]
    total = 0.0
    for m in range(n_bins):
        mask = bins == m
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(float(correct[mask].mean()) - float(confidence[mask].mean()))
        total += (count / n) * gap
    return float(total)


def cc_ece(probabilities, targets, n_classes: int | None = None,
           n_bins: int = DEFAULT_BINS) -> float:
    """Class-conditional ECE: partition by predicted class, average the
    per-partition ECE weighted by partition size."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if n_classes is None:
        n_classes = probabilities.shape[1]
    labels = _check_labels(targets, n_classes)
    predicted = _predicted_labels(probabilities)
    n = labels.shape[0]
    total = 0.0
    for c in range(1, n_classes + 1):
        mask = predicted == c
        count = int(mask.sum())
        if count == 0:
            continue
        total += (count / n) * ece(probabilities[mask], labels[mask], n_bins)
    return float(total)


def nll_classification(probabilities, targets) -> float:
    """Mean negative log probability assigned to the true class."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = _check_labels(targets, probabilities.shape[1])
    picked = probabilities[np.arange(labels.shape[0]), labels - 1]
    with np.errstate(divide="ignore"):
        return float(np.mean(-np.log(picked)))


def gaussian_nll(means, variances, targets) -> float:
    """Mean over samples of the negative Gaussian log density, summed over
    output dimensions."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(means.shape)
    if means.size == 0:
        raise ValueError("empty dataset")
    per_sample = gaussian_log_density(y, means, variances).reshape(means.shape[0], -1).sum(axis=1)
    return float(np.mean(-per_sample))


def mse(means, targets) -> float:
    """Mean squared difference between predicted means and targets."""
    means = np.asarray(means, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(means.shape)
    if means.size == 0:
        raise ValueError("empty dataset")
    return float(np.mean((means - y) ** 2))


def compute_metrics(prediction: BatchPrediction, targets,
                    n_bins: int = DEFAULT_BINS) -> MetricReport:
    if prediction.task == "classification":
        probs = prediction.probabilities
        return MetricReport(
            task="classification",
            accuracy=accuracy(probs, targets),
            f1_macro=f1_macro(probs, targets),
            ece=ece(probs, targets, n_bins),
            cc_ece=cc_ece(probs, targets, n_bins=n_bins),
            nll=nll_classification(probs, targets),
        )
    return MetricReport(
        task="regression",
        gaussian_nll=gaussian_nll(prediction.mean, prediction.variance, targets),
        mse=mse(prediction.mean, targets),
    )


@dataclass
class EvalResult:
    """Dataset-level evaluation: per-sample predictions, metrics, and the
    masked posterior actually used."""

    prediction: BatchPrediction
    metrics: MetricReport
    theta_star: np.ndarray


def evaluate_dataset(net: MultiExitNet, posterior: DepthPosterior, dataset, k: int,
                     n_bins: int = DEFAULT_BINS) -> EvalResult:
    """Evaluate every sample in one forward pass (full-batch statistics)."""
    _check_posterior(net, posterior)
    features = np.asarray(dataset.features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != net.config.in_dim:
        raise ValueError(f"dataset features must be (n, {net.config.in_dim}), "
                         f"got shape {features.shape}")
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    x_star = np.tile(features, (1, net.config.n_inputs))
    grid = net.forward(x_star)
    theta_star = posterior.masked(k)
    prediction = aggregate_grid(grid, theta_star)
    metrics = compute_metrics(prediction, np.asarray(dataset.targets), n_bins)
    return EvalResult(prediction=prediction, metrics=metrics, theta_star=theta_star)
