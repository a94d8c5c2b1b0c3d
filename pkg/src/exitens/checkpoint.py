"""Versioned JSON checkpoints: config echo, posterior, and named weights.

Parameters are stored as nested lists in declaration order under their
stable names.  JSON float round-tripping is exact for 64-bit values, so a
save/load cycle reproduces the network bitwise.
"""

from __future__ import annotations

import numpy as np

from .network import ModelConfig, MultiExitNet, build_network
from .posterior import DepthPosterior
from .records import read_json, write_json

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "exitens-checkpoint"
CHECKPOINT_VERSION = 1

_CONFIG_FIELDS = ("n_inputs", "max_exits", "depth", "width", "in_dim", "out_dim",
                  "task", "seed")


def save_checkpoint(path, net: MultiExitNet, posterior: DepthPosterior) -> None:
    config = net.config
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": {name: getattr(config, name) for name in _CONFIG_FIELDS},
        "temperature": posterior.temperature,
        "exit_logits": posterior.logits.tolist(),
        "parameters": {name: tensor.data.tolist()
                       for name, tensor in net.named_parameters()},
    }
    write_json(record, path)


def load_checkpoint(path) -> tuple[MultiExitNet, DepthPosterior]:
    record = read_json(path)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file (format={record.get('format')!r})")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')!r}")
    missing = [k for k in ("config", "temperature", "exit_logits", "parameters")
               if k not in record]
    if missing:
        raise ValueError(f"{path}: checkpoint missing fields {missing}")
    config_dict = record["config"]
    unknown = set(config_dict) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown config fields {sorted(unknown)}")
    config = ModelConfig(**config_dict)
    net = build_network(config)
    stored = record["parameters"]
    for name, tensor in net.named_parameters():
        if name not in stored:
            raise ValueError(f"{path}: checkpoint missing parameter {name!r}")
        value = np.asarray(stored[name], dtype=np.float64)
        if value.shape != tensor.data.shape:
            raise ValueError(f"{path}: parameter {name!r} has shape {value.shape}, "
                             f"expected {tensor.data.shape}")
        tensor.data = value
    extra = set(stored) - {name for name, _ in net.named_parameters()}
    if extra:
        raise ValueError(f"{path}: unexpected parameters {sorted(extra)}")
    posterior = DepthPosterior(np.asarray(record["exit_logits"], dtype=np.float64),
                               float(record["temperature"]))
    if posterior.n_inputs != config.n_inputs or posterior.depth != config.depth:
        raise ValueError(f"{path}: posterior shape {posterior.logits.shape} does not match "
                         f"config ({config.n_inputs}, {config.depth})")
    return net, posterior
