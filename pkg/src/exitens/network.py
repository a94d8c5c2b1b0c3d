"""The trainable multi-input multi-exit residual network.

A widened affine input layer feeds a stack of residual blocks (affine,
batch norm, ReLU around an identity skip).  After every block an exit head
(affine, batch norm, ReLU, prediction affine) emits raw predictions for
all input slots, so exit j depends only on blocks 1..j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, astensor, batch_norm, matmul, narrow, relu
from .costs import fc_network_params

__all__ = [
    "ModelConfig",
    "Affine",
    "BatchNorm",
    "MultiExitNet",
    "PredictionGrid",
    "build_network",
    "split_predictions",
]

TASKS = ("classification", "regression")


@dataclass(frozen=True)
class ModelConfig:
    """Geometry and task of one multi-exit network.

    n_inputs:  input slots processed per forward pass (N)
    max_exits: largest number of exits kept per input at evaluation (K)
    depth:     residual blocks, one exit per block (D)
    width:     hidden feature size (F)
    in_dim:    features per single input sample (C)
    out_dim:   classes, or regression target dimensions (O)
    """

    n_inputs: int
    max_exits: int
    depth: int
    width: int
    in_dim: int
    out_dim: int
    task: str
    seed: int = 0

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ValueError(f"n_inputs must be >= 1, got {self.n_inputs}")
        if not 1 <= self.max_exits <= self.depth:
            raise ValueError(f"max_exits must satisfy 1 <= K <= D, got K={self.max_exits}, D={self.depth}")
        for name in ("depth", "width", "in_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def raw_out_dim(self) -> int:
        """Raw outputs per input slot: class logits, or mean plus log-variance heads."""
        return self.out_dim if self.task == "classification" else 2 * self.out_dim


class Affine(object):
    """Dense layer y = x W + b, weights uniform in +-1/sqrt(fan_in), zero bias."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class BatchNorm(object):
    """Learnable scale/shift around batch-statistics normalisation."""

    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class _Block(object):
    """Residual block: x + relu(bn(affine(x)))."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.affine = Affine(width, width, rng)
        self.bn = BatchNorm(width)

    def __call__(self, x: Tensor) -> Tensor:
        return add(x, relu(self.bn(self.affine(x))))

    def named_parameters(self, prefix: str):
        return self.affine.named_parameters(f"{prefix}.affine") + self.bn.named_parameters(f"{prefix}.bn")


class _Exit(object):
    """Exit head: affine to the exit width, bn, relu, prediction affine."""

    def __init__(self, width: int, head_dim: int, rng: np.random.Generator):
        self.affine = Affine(width, width, rng)
        self.bn = BatchNorm(width)
        self.head = Affine(width, head_dim, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.head(relu(self.bn(self.affine(h))))

    def named_parameters(self, prefix: str):
        return (self.affine.named_parameters(f"{prefix}.affine")
                + self.bn.named_parameters(f"{prefix}.bn")
                + self.head.named_parameters(f"{prefix}.head"))


@dataclass
class PredictionGrid:
    """Per-exit raw outputs for one batch, sliceable per input slot.

    ``exit_outputs[j]`` has shape (batch, n_inputs * raw_out_dim) with an
    input-major layout: slot i owns columns [i*raw_out_dim, (i+1)*raw_out_dim).
    """

    n_inputs: int
    raw_out_dim: int
    task: str
    exit_outputs: list

    @property
    def depth(self) -> int:
        return len(self.exit_outputs)

    @property
    def batch_size(self) -> int:
        return self.exit_outputs[0].shape[0]

    def entry(self, input_index: int, exit_index: int) -> Tensor:
        if not 0 <= input_index < self.n_inputs:
            raise IndexError(f"input index {input_index} out of range for {self.n_inputs} inputs")
        if not 0 <= exit_index < self.depth:
            raise IndexError(f"exit index {exit_index} out of range for depth {self.depth}")
        start = input_index * self.raw_out_dim
        return narrow(self.exit_outputs[exit_index], 1, start, self.raw_out_dim)


def split_predictions(grid: PredictionGrid, input_index: int, exit_index: int) -> Tensor:
    """Raw prediction slice for one input slot at one exit (0-based indices)."""
    return grid.entry(input_index, exit_index)


class MultiExitNet(object):
    """The trainable network; immutable during forward passes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        head_dim = config.n_inputs * config.raw_out_dim
        self.input_layer = Affine(config.n_inputs * config.in_dim, config.width, rng)
        self.blocks = [_Block(config.width, rng) for _ in range(config.depth)]
        self.exits = [_Exit(config.width, head_dim, rng) for _ in range(config.depth)]

    def forward(self, x) -> PredictionGrid:
        x = astensor(x)
        expected = self.config.n_inputs * self.config.in_dim
        if x.ndim != 2 or x.shape[1] != expected:
            raise ValueError(f"forward expects shape (batch, {expected}), got {x.shape}")
        h = self.input_layer(x)
        outputs = []
        for block, exit_head in zip(self.blocks, self.exits):
            h = block(h)
            outputs.append(exit_head(h))
        return PredictionGrid(self.config.n_inputs, self.config.raw_out_dim,
                              self.config.task, outputs)

    def named_parameters(self) -> list:
        """All learnable tensors with stable names, in declaration order."""
        named = self.input_layer.named_parameters("input")
        for j, block in enumerate(self.blocks, start=1):
            named += block.named_parameters(f"block{j}")
        for j, exit_head in enumerate(self.exits, start=1):
            named += exit_head.named_parameters(f"exit{j}")
        return named

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())


def build_network(config: ModelConfig, rng: np.random.Generator | None = None) -> MultiExitNet:
    """Construct the network; identical seeds give bit-identical parameters.

    The resulting parameter count equals the analytic fully connected
    count for the same geometry.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    net = MultiExitNet(config, rng)
    expected = fc_network_params(config.n_inputs, config.depth, config.width,
                                 config.in_dim, config.raw_out_dim)
    actual = net.parameter_count()
    if actual != expected:
        raise AssertionError(f"constructed parameter count {actual} != analytic count {expected}")
    return net
