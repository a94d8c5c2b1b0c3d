"""Shared oracles for the test suite.

The central-difference gradient oracle and the random small-instance
factory live here so that unit tests and the acceptance suite compare
against the same independent reference implementations.
"""

import numpy as np

from exitens.autodiff import Tape, Tensor, backward, softmax_with_temperature
from exitens.network import ModelConfig, build_network
from exitens.objective import elbo_loss


def numeric_grad(f, tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar callable f with respect to
    tensor.data, perturbing one entry at a time."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + h
        hi = f()
        flat[idx] = original - h
        lo = f()
        flat[idx] = original
        grad_flat[idx] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm of the difference over the larger norm, floored at 1 so that
    near-zero gradients compare absolutely."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(1.0, float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    return float(np.linalg.norm(a - n)) / scale


def elbo_total_value(net, logits, x, y, exit_sets, alpha, temperature, task) -> float:
    """Forward-only loss evaluation (no tape), used as the FD target."""
    theta = softmax_with_temperature(logits, temperature)
    grid = net.forward(x)
    _, breakdown = elbo_loss(grid, y, exit_sets, theta, alpha, task)
    return breakdown.total


def elbo_backward(net, logits, x, y, exit_sets, alpha, temperature, task):
    """Taped loss evaluation; returns the breakdown after backward so every
    parameter's .grad is populated."""
    for p in net.parameters() + [logits]:
        p.zero_grad()
    with Tape():
        theta = softmax_with_temperature(logits, temperature)
        grid = net.forward(x)
        total, breakdown = elbo_loss(grid, y, exit_sets, theta, alpha, task)
        backward(total)
    return breakdown


def random_instance(rng: np.random.Generator):
    """A small random training instance: network, posterior logits, batch,
    sampled exit sets, and schedule values.  Sizes stay within D<=3, N<=2,
    B<=4, F<=8 so finite differencing stays fast."""
    task = rng.choice(["classification", "regression"])
    n_inputs = int(rng.integers(1, 3))
    depth = int(rng.integers(1, 4))
    k = int(rng.integers(1, depth + 1))
    width = int(rng.integers(2, 9))
    in_dim = int(rng.integers(1, 4))
    out_dim = int(rng.integers(1, 4)) if task == "classification" else int(rng.integers(1, 3))
    if task == "classification" and out_dim == 1:
        out_dim = 2
    batch = int(rng.integers(2, 5))
    config = ModelConfig(n_inputs=n_inputs, max_exits=k, depth=depth, width=width,
                         in_dim=in_dim, out_dim=out_dim, task=task,
                         seed=int(rng.integers(0, 1000)))
    net = build_network(config)
    logits = Tensor(0.3 * rng.standard_normal((n_inputs, depth)), requires_grad=True)
    x = rng.standard_normal((batch, n_inputs * in_dim))
    if task == "classification":
        y = rng.integers(1, out_dim + 1, size=(batch, n_inputs))
    else:
        y = rng.standard_normal((batch, n_inputs, out_dim))
    exit_sets = []
    for _ in range(n_inputs):
        chosen = rng.permutation(depth)[:k]
        exit_sets.append(tuple(int(j) for j in chosen))
    alpha = float(rng.uniform(0.0, 1.0))
    temperature = float(rng.uniform(0.3, 1.0))
    return net, logits, x, y, exit_sets, alpha, temperature, task


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_VERDICTS: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
