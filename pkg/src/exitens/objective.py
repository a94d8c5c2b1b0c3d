"""Training objective and schedules for the multi-exit ensemble.

The loss couples the prediction grid to the depth posterior: each input
slot contributes log-likelihood terms for its sampled exits, weighted by
that slot's exit probabilities, and a KL term pulls every slot toward the
uniform prior over depths.  The loss is written in minimization form, so
the data-fit part is a weighted negative log-likelihood.  All schedule
knobs (regulariser weight, softmax temperature, input-repetition fraction)
interpolate linearly in the step index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    LN_2PI,
    Tensor,
    add,
    astensor,
    div,
    exp,
    log_softmax,
    mul,
    narrow,
    neg,
    sub,
    take_per_row,
    tsum,
)
from .network import TASKS, PredictionGrid
from .posterior import kl_to_uniform

__all__ = [
    "ScheduleSpec",
    "LossBreakdown",
    "schedule_value",
    "log_likelihood",
    "log_likelihood_rows",
    "gaussian_log_density",
    "elbo_loss",
]


def schedule_value(start: float, end: float, t: int, t_end: int) -> float:
    """Linear interpolation from start (t=0) to end (t=t_end).

    The endpoints are returned exactly, with no floating-point drift.
    """
    if t_end < 1:
        raise ValueError(f"t_end must be at least 1, got {t_end}")
    if not 0 <= t <= t_end:
        raise ValueError(f"step {t} outside schedule range [0, {t_end}]")
    if t == 0:
        return float(start)
    if t == t_end:
        return float(end)
    return start + (end - start) * (t / t_end)


@dataclass(frozen=True)
class ScheduleSpec:
    """Linear schedules for the three training-time knobs.

    ``alpha`` weights the KL regulariser, ``temperature`` tempers the
    posterior softmax, ``repetition`` is the fraction of batch rows where
    one sample fills every input slot.  Defaults anneal from a fully
    relaxed start (no regulariser, unit temperature, full repetition) to a
    sharp, independent-slot end.
    """

    alpha_start: float = 0.0
    alpha_end: float = 1.0
    temperature_start: float = 1.0
    temperature_end: float = 0.01
    repetition_start: float = 1.0
    repetition_end: float = 0.0
    t_end: int = 1

    def __post_init__(self):
        for name in ("alpha_start", "alpha_end", "repetition_start", "repetition_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("temperature_start", "temperature_end"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.t_end < 1:
            raise ValueError(f"t_end must be at least 1, got {self.t_end}")

    def alpha(self, t: int) -> float:
        return schedule_value(self.alpha_start, self.alpha_end, t, self.t_end)

    def temperature(self, t: int) -> float:
        return schedule_value(self.temperature_start, self.temperature_end, t, self.t_end)

    def input_repetition(self, t: int) -> float:
        return schedule_value(self.repetition_start, self.repetition_end, t, self.t_end)


@dataclass(frozen=True)
class LossBreakdown:
    """One step's loss split into its additive parts."""

    data_fit: float
    regularizer: float
    alpha: float
    total: float

    def __post_init__(self):
        # non-finite parts are reported as-is so divergence can be diagnosed
        if not all(math.isfinite(v) for v in (self.data_fit, self.regularizer, self.total)):
            return
        recomposed = self.data_fit + self.alpha * self.regularizer
        if not abs(self.total - recomposed) <= 1e-12:
            raise ValueError(
                f"inconsistent breakdown: total {self.total!r} != "
                f"data_fit + alpha*regularizer = {recomposed!r}"
            )

    def to_record(self) -> dict:
        return {
            "data_fit": self.data_fit,
            "regularizer": self.regularizer,
            "alpha": self.alpha,
            "total": self.total,
        }


def _check_task(task: str) -> None:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def log_likelihood_rows(raw, targets, task: str) -> Tensor:
    """Per-row log likelihood for a batch of raw head outputs.

    Classification: ``raw`` is (B, O) logits and ``targets`` holds class
    labels in 1..O.  Regression: ``raw`` is (B, 2*O), the first O columns
    the predicted means and the last O the log variances, and ``targets``
    is (B,) or (B, O).  Returns a length-B tensor, differentiable in raw.
    """
    _check_task(task)
    raw = astensor(raw)
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-D batch of raw outputs, got shape {raw.shape}")
    b = raw.shape[0]
    if task == "classification":
        labels = np.asarray(targets)
        if labels.shape != (b,):
            raise ValueError(f"need one label per row, got shape {labels.shape} for batch {b}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError(f"classification labels must be integers, got dtype {labels.dtype}")
        n_classes = raw.shape[1]
        if labels.min() < 1 or labels.max() > n_classes:
            raise ValueError(f"class labels must lie in 1..{n_classes}, got range "
                             f"[{labels.min()}, {labels.max()}]")
        return take_per_row(log_softmax(raw), labels - 1)
    if raw.shape[1] % 2 != 0:
        raise ValueError(f"regression raw output needs mean and log-variance halves, got {raw.shape[1]} columns")
    out_dim = raw.shape[1] // 2
    y = np.asarray(targets, dtype=np.float64)
    if y.shape == (b,) and out_dim == 1:
        y = y[:, None]
    if y.shape != (b, out_dim):
        raise ValueError(f"regression targets must have shape ({b}, {out_dim}), got {y.shape}")
    mean = narrow(raw, 1, 0, out_dim)
    log_var = narrow(raw, 1, out_dim, out_dim)
    diff = sub(y, mean)
    mahal = mul(mul(diff, diff), exp(neg(log_var)))
    per_dim = mul(add(add(log_var, mahal), LN_2PI), -0.5)
    return tsum(per_dim, axis=1)


def log_likelihood(raw, target, task: str) -> float:
    """Scalar log likelihood of one prediction; see :func:`log_likelihood_rows`."""
    row = astensor(raw)
    if row.ndim != 1:
        raise ValueError(f"expected a single raw output vector, got shape {row.shape}")
    if task == "classification":
        targets = np.asarray([target])
    else:
        targets = np.asarray(target, dtype=np.float64).reshape(1, -1)
    data = row.data[None, :]
    return float(log_likelihood_rows(data, targets, task).data[0])


def gaussian_log_density(y, mean, variance) -> np.ndarray:
    """Elementwise log N(y | mean, variance); variance must be positive."""
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance <= 0):
        raise ValueError("variance must be strictly positive")
    return -0.5 * (LN_2PI + np.log(variance) + (y - mean) ** 2 / variance)


def _theta_entry(theta: Tensor, i: int, j: int) -> Tensor:
    return tsum(narrow(narrow(theta, 0, i, 1), 1, j, 1))


def elbo_loss(
    grid: PredictionGrid,
    targets,
    exit_sets,
    theta,
    alpha: float,
    task: str,
) -> tuple[Tensor, LossBreakdown]:
    """Minimisation-form variational objective for one batch.

    data_fit  = -(1/B) sum_b sum_i sum_{j in set_i} theta[i,j] * log p(y_i_b | raw_i_j_b)
    regulariser = sum_i KL(theta[i] || uniform)
    total = data_fit + alpha * regulariser

    ``exit_sets`` holds one tuple of distinct exit indices per input slot,
    shared across the batch.  Returns the total as a scalar tensor
    (differentiable in the network outputs and theta) plus a float
    breakdown for logging.
    """
    _check_task(task)
    theta = astensor(theta)
    n, depth = grid.n_inputs, grid.depth
    if theta.shape != (n, depth):
        raise ValueError(f"theta must have shape ({n}, {depth}), got {theta.shape}")
    if not np.all(np.abs(theta.data.sum(axis=1) - 1.0) <= 1e-8):
        raise ValueError("theta rows must each sum to 1")
    if len(exit_sets) != n:
        raise ValueError(f"need one exit set per input slot, got {len(exit_sets)} for {n}")
    batch = grid.batch_size
    targets = np.asarray(targets)
    if targets.shape[0] != batch or targets.ndim < 2 or targets.shape[1] != n:
        raise ValueError(f"targets must be (batch, n_inputs, ...), got shape {targets.shape}")

    weighted = None
    for i, exits in enumerate(exit_sets):
        if len(set(exits)) != len(exits):
            raise ValueError(f"exit set for input {i} has repeats: {tuple(exits)}")
        slot_targets = targets[:, i]
        for j in exits:
            if not 0 <= j < depth:
                raise ValueError(f"exit index {j} out of range for depth {depth}")
            ll = tsum(log_likelihood_rows(grid.entry(i, j), slot_targets, task))
            term = mul(_theta_entry(theta, i, j), ll)
            weighted = term if weighted is None else add(weighted, term)
    data_fit = div(neg(weighted), float(batch))
    regularizer = tsum(kl_to_uniform(theta))
    total = add(data_fit, mul(float(alpha), regularizer))
    breakdown = LossBreakdown(
        data_fit=float(data_fit.data),
        regularizer=float(regularizer.data),
        alpha=float(alpha),
        total=float(total.data),
    )
    return total, breakdown
