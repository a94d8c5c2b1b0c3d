"""Learnable categorical distribution over exit depths, one row per input.

Logits start at zero so every exit begins equally weighted.  A scheduled
temperature sharpens the softmax over training; sampling draws K distinct
exits per input via Gumbel perturbation, and evaluation keeps the top K
logits per row while the rest collapse to exactly zero mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, astensor, softmax_with_temperature, tsum, xlogx

__all__ = [
    "DepthPosterior",
    "exit_probabilities",
    "sample_top_k",
    "sample_exit_sets",
    "kl_to_uniform",
    "mask_top_k",
    "active_exit_union",
]


def exit_probabilities(logits, temperature: float):
    """Row-wise softmax of logits/temperature.

    Accepts a Tensor (differentiable, for the training loss) or an array;
    the return type mirrors the input.
    """
    if isinstance(logits, Tensor):
        return softmax_with_temperature(logits, temperature)
    return softmax_with_temperature(astensor(logits), temperature).data


def sample_top_k(logits_row, k: int, temperature: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw k distinct exit indices for one input without replacement.

    Each logit/temperature is perturbed with independent standard Gumbel
    noise -log(-log(u)) and the indices of the k largest perturbed values
    are returned, largest first.  With k == 1 this reproduces exact
    categorical sampling from the tempered softmax.
    """
    row = np.asarray(logits_row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError(f"sample_top_k expects a single logit row, got shape {row.shape}")
    depth = row.shape[0]
    if not 1 <= k <= depth:
        raise ValueError(f"k must satisfy 1 <= k <= {depth}, got {k}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    u = np.maximum(rng.random(depth), np.finfo(np.float64).tiny)
    perturbed = row / temperature - np.log(-np.log(u))
    order = np.argsort(-perturbed, kind="stable")
    return tuple(int(i) for i in order[:k])


def sample_exit_sets(logits, k: int, temperature: float, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """One sampled exit set per input row, in row order."""
    matrix = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return [sample_top_k(matrix[i], k, temperature, rng) for i in range(matrix.shape[0])]


def kl_to_uniform(theta):
    """KL divergence of each probability row from the uniform distribution.

    Per row: sum_j theta_j * log(theta_j * D), with 0*log(0) = 0.  Ranges
    between 0 (uniform row) and log(D) (one-hot row).  Tensor inputs stay
    differentiable; arrays come back as arrays (or a float for one row).
    """
    tensor_in = isinstance(theta, Tensor)
    t = theta if tensor_in else astensor(theta)
    depth = t.shape[-1]
    out = add(tsum(xlogx(t), axis=-1), math.log(depth))
    if tensor_in:
        return out
    return float(out.data) if out.data.ndim == 0 else out.data


def mask_top_k(logits, k: int, temperature: float) -> np.ndarray:
    """Evaluation-time posterior: keep the top k logits per row, zero the rest.

    The discarded entries become -inf before a tempered softmax, so their
    mass is exactly zero and each row still sums to one.  Ties keep the
    lowest exit index.
    """
    matrix = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    n, depth = matrix.shape
    if not 1 <= k <= depth:
        raise ValueError(f"k must satisfy 1 <= k <= {depth}, got {k}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    theta_star = np.zeros_like(matrix)
    for i in range(n):
        row = matrix[i]
        keep = np.argsort(-row, kind="stable")[:k]
        masked = np.full(depth, -np.inf)
        masked[keep] = row[keep]
        shifted = (masked - masked.max()) / temperature
        e = np.exp(shifted)
        theta_star[i] = e / e.sum()
    return theta_star


def active_exit_union(theta_star) -> tuple[int, ...]:
    """Exits carrying nonzero mass for at least one input; only these need
    to run at evaluation."""
    matrix = np.asarray(theta_star, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    return tuple(int(j) for j in np.flatnonzero((matrix > 0).any(axis=0)))


@dataclass
class DepthPosterior:
    """Trained exit preferences: logits plus the final softmax temperature."""

    logits: np.ndarray
    temperature: float

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ValueError(f"logits must be 2-D (inputs x exits), got shape {self.logits.shape}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def n_inputs(self) -> int:
        return self.logits.shape[0]

    @property
    def depth(self) -> int:
        return self.logits.shape[1]

    def probabilities(self) -> np.ndarray:
        return exit_probabilities(self.logits, self.temperature)

    def masked(self, k: int) -> np.ndarray:
        return mask_top_k(self.logits, k, self.temperature)
