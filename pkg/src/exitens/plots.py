"""Training-report rendering: loss/schedule curves and depth-preference
trajectories as PNG files, plus the same log as a tab-delimited table.

Everything draws through the Agg backend, so reports render identically
on headless machines.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_loss_curves",
    "plot_schedules",
    "plot_depth_preferences",
    "write_log_table",
    "render_report",
]

_TABLE_COLUMNS = ("step", "alpha", "temperature", "input_repetition",
                  "data_fit", "regularizer", "total")


def _check_records(records) -> list[dict]:
    records = list(records)
    if not records:
        raise ValueError("empty training log; nothing to report")
    return records


def plot_loss_curves(records, path) -> None:
    records = _check_records(records)
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for key, style in (("total", "-"), ("data_fit", "--"), ("regularizer", ":")):
        ax.plot(steps, [r[key] for r in records], style, label=key.replace("_", " "))
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss decomposition")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_schedules(records, path) -> None:
    records = _check_records(records)
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for key in ("alpha", "temperature", "input_repetition"):
        ax.plot(steps, [r[key] for r in records], label=key.replace("_", " "))
    ax.set_xlabel("step")
    ax.set_ylabel("scheduled value")
    ax.set_title("hyperparameter schedules")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_depth_preferences(records, path) -> bool:
    """Per-slot exit-probability trajectories; returns False when the log
    carries no posterior snapshots."""
    records = _check_records(records)
    snaps = [(r["step"], np.asarray(r["theta"])) for r in records if "theta" in r]
    if not snaps:
        return False
    steps = [s for s, _ in snaps]
    first = snaps[0][1]
    n_inputs, depth = first.shape
    fig, axes = plt.subplots(1, n_inputs, figsize=(4.0 * n_inputs, 3.6),
                             sharey=True, squeeze=False)
    for i in range(n_inputs):
        ax = axes[0][i]
        for j in range(depth):
            ax.plot(steps, [theta[i, j] for _, theta in snaps], label=f"exit {j + 1}")
        ax.set_xlabel("step")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"input slot {i + 1}")
    axes[0][0].set_ylabel("exit probability")
    axes[0][-1].legend(loc="upper left", fontsize="small")
    fig.suptitle("depth preference during training")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def write_log_table(records, path) -> None:
    """Tab-delimited view of the per-step log (theta snapshots omitted)."""
    records = _check_records(records)
    lines = ["\t".join(_TABLE_COLUMNS)]
    for r in records:
        lines.append("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                               for c in _TABLE_COLUMNS))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def render_report(records, out_dir) -> list[str]:
    """Write all figures plus the delimited table; returns created paths."""
    records = _check_records(records)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    loss_path = os.path.join(out_dir, "loss_curves.png")
    plot_loss_curves(records, loss_path)
    written.append(loss_path)
    sched_path = os.path.join(out_dir, "schedules.png")
    plot_schedules(records, sched_path)
    written.append(sched_path)
    depth_path = os.path.join(out_dir, "depth_preferences.png")
    if plot_depth_preferences(records, depth_path):
        written.append(depth_path)
    table_path = os.path.join(out_dir, "training_curves.tsv")
    write_log_table(records, table_path)
    written.append(table_path)
    return written
