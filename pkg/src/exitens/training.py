"""Single-threaded training loop: batch assembly with scheduled input
repetition, one sampled exit set per slot per step, gradient clipping, and
SGD or Adam updates on both the network weights and the posterior logits.

Training is step-indexed, not epoch-indexed; every draw comes from one
seeded generator, so a (config, seed, dataset) triple fixes the entire
parameter trajectory bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward
from .network import ModelConfig, MultiExitNet, build_network
from .objective import LossBreakdown, ScheduleSpec, elbo_loss
from .posterior import DepthPosterior, exit_probabilities, sample_top_k

__all__ = [
    "TrainerConfig",
    "Batch",
    "TrainState",
    "TrainResult",
    "TrainingDiverged",
    "Sgd",
    "Adam",
    "make_optimizer",
    "make_batch",
    "clip_gradients",
    "train_step",
    "train_loop",
]

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainerConfig:
    """Optimisation and batching knobs.

    ``steps`` is the number of update steps (the schedules' endpoint must
    agree).  ``batch_repetition`` tiles each sampled batch that many times
    before slot assignment, so one primary sample is seen with several
    independent partner draws in the same step.
    """

    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    batch_size: int = 32
    steps: int = 1000
    batch_repetition: int = 1
    log_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_repetition < 1:
            raise ValueError(f"batch_repetition must be at least 1, got {self.batch_repetition}")
        if self.log_interval < 1:
            raise ValueError(f"log_interval must be at least 1, got {self.log_interval}")


@dataclass
class Batch:
    """Assembled rows: x is (rows, n_inputs*in_dim), y aligns slot targets."""

    x: np.ndarray
    y: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss."""

    def __init__(self, step: int, breakdown: LossBreakdown):
        super().__init__(f"non-finite loss at step {step}: total={breakdown.total!r}, "
                         f"data_fit={breakdown.data_fit!r}, regularizer={breakdown.regularizer!r}")
        self.step = step
        self.breakdown = breakdown


class Sgd:
    """Plain gradient descent; weight decay adds wd*param to the gradient."""

    def __init__(self, params, learning_rate: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data = p.data - self.learning_rate * g


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, learning_rate: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, params, learning_rate: float, weight_decay: float):
    if name == "sgd":
        return Sgd(params, learning_rate, weight_decay)
    if name == "adam":
        return Adam(params, learning_rate, weight_decay)
    raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {name!r}")


def make_batch(dataset, batch_size: int, n_inputs: int, repetition_fraction: float,
               rng: np.random.Generator, batch_repetition: int = 1) -> Batch:
    """Assemble one training batch of batch_size*batch_repetition rows.

    Primary samples are drawn with replacement and tiled batch_repetition
    times.  The first floor(fraction*rows) rows duplicate their primary
    into every input slot; the remaining rows keep the primary in slot 0
    and draw the other slots independently, so all slots are identically
    distributed.
    """
    if not 0.0 <= repetition_fraction <= 1.0:
        raise ValueError(f"repetition fraction must lie in [0, 1], got {repetition_fraction}")
    m = len(dataset)
    if m == 0:
        raise ValueError("cannot draw batches from an empty dataset")
    primaries = rng.integers(0, m, size=batch_size)
    primaries = np.tile(primaries, batch_repetition)
    rows = primaries.shape[0]
    n_repeated = int(math.floor(repetition_fraction * rows))
    index = np.repeat(primaries[:, None], n_inputs, axis=1)
    if n_repeated < rows and n_inputs > 1:
        index[n_repeated:, 1:] = rng.integers(0, m, size=(rows - n_repeated, n_inputs - 1))
    features = np.asarray(dataset.features, dtype=np.float64)
    targets = np.asarray(dataset.targets)
    x = features[index].reshape(rows, -1)
    y = targets[index]
    return Batch(x=x, y=y)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is at most
    max_norm; returns the pre-clip norm.  A norm exactly at the limit is
    left untouched."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class TrainState:
    """Everything mutated across steps: model, posterior logits, optimizer
    slots, and the draw generator."""

    net: MultiExitNet
    exit_logits: Tensor
    optimizer: object
    schedule: ScheduleSpec
    config: TrainerConfig
    rng: np.random.Generator

    @property
    def all_params(self) -> list:
        return self.net.parameters() + [self.exit_logits]


def init_train_state(model_config: ModelConfig, trainer: TrainerConfig,
                     schedule: ScheduleSpec) -> TrainState:
    net = build_network(model_config)
    logits = Tensor(np.zeros((model_config.n_inputs, model_config.depth)), requires_grad=True)
    params = net.parameters() + [logits]
    opt = make_optimizer(trainer.optimizer, params, trainer.learning_rate, trainer.weight_decay)
    return TrainState(net=net, exit_logits=logits, optimizer=opt, schedule=schedule,
                      config=trainer, rng=np.random.default_rng(trainer.seed))


def train_step(state: TrainState, batch: Batch, t: int) -> LossBreakdown:
    """One optimisation step at step index t; raises TrainingDiverged on a
    non-finite loss before any parameter update."""
    schedule = state.schedule
    if not t < schedule.t_end:
        raise ValueError(f"step {t} is past the schedule end {schedule.t_end}")
    alpha = schedule.alpha(t)
    temperature = schedule.temperature(t)
    model_config = state.net.config
    k = model_config.max_exits
    exit_sets = [sample_top_k(state.exit_logits.data[i], k, temperature, state.rng)
                 for i in range(model_config.n_inputs)]
    for p in state.all_params:
        p.zero_grad()
    with Tape():
        theta = exit_probabilities(state.exit_logits, temperature)
        grid = state.net.forward(batch.x)
        total, breakdown = elbo_loss(grid, batch.y, exit_sets, theta, alpha,
                                     model_config.task)
        if not math.isfinite(breakdown.total):
            raise TrainingDiverged(t, breakdown)
        backward(total)
    clip_gradients(state.all_params, state.config.clip_norm)
    state.optimizer.step()
    return breakdown


@dataclass
class TrainResult:
    """Trained model, its depth posterior at the final temperature, and the
    per-step log (list of plain dict records)."""

    net: MultiExitNet
    posterior: DepthPosterior
    log: list = field(default_factory=list)


def train_loop(model_config: ModelConfig, trainer: TrainerConfig,
               schedule: ScheduleSpec, dataset) -> TrainResult:
    """Run trainer.steps update steps and return the trained artefacts.

    Each log record carries {step, alpha, temperature, input_repetition,
    data_fit, regularizer, total}; every log_interval steps (and on the
    final step) the record also embeds the current theta matrix.  With
    steps=0 the initialized network and an empty log come back unchanged.
    """
    _check_dataset(model_config, dataset)
    if trainer.steps == 0:
        net = build_network(model_config)
        logits = np.zeros((model_config.n_inputs, model_config.depth))
        return TrainResult(net=net, posterior=DepthPosterior(logits, schedule.temperature_end),
                           log=[])
    if schedule.t_end != trainer.steps:
        raise ValueError(f"schedule t_end {schedule.t_end} must equal trainer steps {trainer.steps}")
    state = init_train_state(model_config, trainer, schedule)
    log: list = []
    for t in range(trainer.steps):
        fraction = schedule.input_repetition(t)
        batch = make_batch(dataset, trainer.batch_size, model_config.n_inputs,
                           fraction, state.rng, trainer.batch_repetition)
        breakdown = train_step(state, batch, t)
        record = {
            "step": t,
            "alpha": breakdown.alpha,
            "temperature": schedule.temperature(t),
            "input_repetition": fraction,
            "data_fit": breakdown.data_fit,
            "regularizer": breakdown.regularizer,
            "total": breakdown.total,
        }
        if t % trainer.log_interval == 0 or t == trainer.steps - 1:
            theta_now = exit_probabilities(state.exit_logits.data, schedule.temperature(t))
            record["theta"] = theta_now.tolist()
        log.append(record)
    posterior = DepthPosterior(state.exit_logits.data.copy(),
                               schedule.temperature(trainer.steps))
    return TrainResult(net=state.net, posterior=posterior, log=log)


def _check_dataset(model_config: ModelConfig, dataset) -> None:
    features = np.asarray(dataset.features)
    if features.ndim != 2 or features.shape[1] != model_config.in_dim:
        raise ValueError(f"dataset features must be (n, {model_config.in_dim}), "
                         f"got shape {features.shape}")
    if getattr(dataset, "task", model_config.task) != model_config.task:
        raise ValueError(f"dataset task {dataset.task!r} does not match model task "
                         f"{model_config.task!r}")
    if model_config.task == "classification":
        targets = np.asarray(dataset.targets)
        if targets.min() < 1 or targets.max() > model_config.out_dim:
            raise ValueError(f"classification labels must lie in 1..{model_config.out_dim}, "
                             f"got range [{targets.min()}, {targets.max()}]")
