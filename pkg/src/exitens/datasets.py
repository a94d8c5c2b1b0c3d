"""Synthetic desk-scale datasets and a strict CSV reader/writer.

Three generators cover the training tasks: linearly separable blobs, a
two-arm spiral, and a noisy sinusoid for regression.  CSV files use the
header f1,...,fC,target; a target column written entirely as integer
literals is read back as classification labels, anything with a decimal
point or exponent as regression values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import TASKS

__all__ = [
    "Dataset",
    "DATASET_KINDS",
    "gen_data",
    "kind_signature",
    "load_csv",
    "save_csv",
]

DATASET_KINDS = ("two_clusters", "spirals", "sinusoid_regression")

# generator -> (in_dim, out_dim, task)
_KIND_SIGNATURES = {
    "two_clusters": (2, 2, "classification"),
    "spirals": (2, 2, "classification"),
    "sinusoid_regression": (1, 1, "regression"),
}


def kind_signature(kind: str) -> tuple[int, int, str]:
    """Feature dimension, output dimension and task of a generator kind."""
    if kind not in _KIND_SIGNATURES:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    return _KIND_SIGNATURES[kind]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus aligned targets; classification labels are 1-based."""

    features: np.ndarray
    targets: np.ndarray
    task: str

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", features)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError(f"features must be a nonempty 2-D matrix, got shape {features.shape}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.task == "classification":
            targets = np.asarray(self.targets)
            if not np.issubdtype(targets.dtype, np.integer):
                targets = targets.astype(np.int64)
            if targets.min() < 1:
                raise ValueError("classification labels must start at 1")
        else:
            targets = np.asarray(self.targets, dtype=np.float64)
        object.__setattr__(self, "targets", targets)
        if targets.shape[0] != features.shape[0]:
            raise ValueError(f"feature/target length mismatch: {features.shape[0]} vs {targets.shape[0]}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            raise ValueError("n_classes is only defined for classification datasets")
        return int(self.targets.max())


def gen_data(kind: str, n: int, noise: float, seed: int) -> Dataset:
    """Deterministic synthetic dataset of n samples.

    two_clusters: 2-D blobs at (-2, 0) and (+2, 0), labels alternating 1/2;
    linearly separable whenever noise < 2.  spirals: two interleaved arms.
    sinusoid_regression: x uniform in [0, 1), y = sin(2*pi*x) + noise*eps.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if noise < 0:
        raise ValueError(f"noise must be nonnegative, got {noise}")
    rng = np.random.default_rng(seed)
    if kind == "two_clusters":
        labels = 1 + (np.arange(n) % 2)
        centers = np.where((labels == 1)[:, None], [-2.0, 0.0], [2.0, 0.0])
        features = centers + noise * rng.standard_normal((n, 2))
        return Dataset(features=features, targets=labels, task="classification")
    if kind == "spirals":
        labels = 1 + (np.arange(n) % 2)
        t = rng.random(n)
        radius = 0.2 + t
        angle = 3.0 * math.pi * t + math.pi * (labels - 1)
        features = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        features = features + noise * rng.standard_normal((n, 2))
        return Dataset(features=features, targets=labels, task="classification")
    if kind == "sinusoid_regression":
        x = rng.random(n)
        y = np.sin(2.0 * math.pi * x) + noise * rng.standard_normal(n)
        return Dataset(features=x[:, None], targets=y, task="regression")
    raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")


def _expected_header(n_features: int) -> str:
    return ",".join([f"f{i}" for i in range(1, n_features + 1)] + ["target"])


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset with full-precision (round-trippable) floats."""
    lines = [_expected_header(dataset.n_features)]
    classification = dataset.task == "classification"
    for row, target in zip(dataset.features, dataset.targets):
        cells = [repr(float(v)) for v in row]
        cells.append(str(int(target)) if classification else repr(float(target)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_cell(cell: str, line_no: int, col_no: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"non-numeric cell at row {line_no}, column {col_no}: {cell!r}") from None


def _is_integer_literal(cell: str) -> bool:
    try:
        int(cell)
    except ValueError:
        return False
    return True


def load_csv(path) -> Dataset:
    """Read a dataset written in the f1,...,fC,target layout.

    Row/column positions in error messages count from the header line, so
    they match what an editor shows.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line.strip() != ""]
    if not lines:
        raise ValueError(f"{path}: empty file, expected a header row")
    header_cells = lines[0].split(",")
    n_cols = len(header_cells)
    if n_cols < 2 or lines[0] != _expected_header(n_cols - 1):
        raise ValueError(f"{path}: header must be {_expected_header(max(n_cols - 1, 1))!r}, "
                         f"got {lines[0]!r}")
    if len(lines) == 1:
        raise ValueError(f"{path}: empty dataset (header only)")
    features, raw_targets = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise ValueError(f"{path}: row {line_no} has {len(cells)} cells, expected {n_cols}")
        features.append([_parse_cell(c, line_no, i + 1) for i, c in enumerate(cells[:-1])])
        _parse_cell(cells[-1], line_no, n_cols)
        raw_targets.append(cells[-1])
    classification = all(_is_integer_literal(c) for c in raw_targets)
    if classification:
        targets = np.asarray([int(c) for c in raw_targets], dtype=np.int64)
        return Dataset(features=np.asarray(features), targets=targets, task="classification")
    targets = np.asarray([float(c) for c in raw_targets], dtype=np.float64)
    return Dataset(features=np.asarray(features), targets=targets, task="regression")
