"""Sectioned key=value configuration files.

Grammar: section names in brackets, one ``key = value`` pair per line,
``#`` starts a comment anywhere.  Unknown sections or keys, duplicates,
missing required keys, and out-of-range values are all rejected with the
offending line number.  Two schemas share the machinery: the training run
config and the cost-query config.
"""

from __future__ import annotations

from dataclasses import dataclass

from .costs import ArchSpec, ExitAssignment
from .datasets import DATASET_KINDS, Dataset, gen_data, kind_signature, load_csv
from .network import TASKS, ModelConfig
from .objective import ScheduleSpec
from .training import OPTIMIZERS, TrainerConfig

__all__ = [
    "DataSource",
    "OutputPaths",
    "EvalSettings",
    "RunConfig",
    "CostQuery",
    "parse_config",
    "render_config",
    "parse_cost_config",
]


# ---------------------------------------------------------------- parsing

def _parse_sections(text: str, schema: dict, source: str) -> dict:
    """Return {(section, key): (line_no, raw_value)} or raise with line info."""
    entries: dict = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ValueError(f"{source}: line {line_no}: unterminated section header {line!r}")
            name = line[1:-1].strip()
            if name not in schema:
                raise ValueError(f"{source}: line {line_no}: unknown section [{name}]; "
                                 f"expected one of {sorted(schema)}")
            current = name
            continue
        if current is None:
            raise ValueError(f"{source}: line {line_no}: key outside any section: {line!r}")
        if "=" not in line:
            raise ValueError(f"{source}: line {line_no}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in schema[current]:
            raise ValueError(f"{source}: line {line_no}: unknown key {key!r} in [{current}]; "
                             f"valid keys: {sorted(schema[current])}")
        if (current, key) in entries:
            first_line = entries[(current, key)][0]
            raise ValueError(f"{source}: line {line_no}: duplicate key {key!r} in [{current}] "
                             f"(first set at line {first_line})")
        entries[(current, key)] = (line_no, value)
    return entries


class _Section:
    """Typed access to one section's raw entries."""

    def __init__(self, entries: dict, name: str, source: str):
        self.entries = entries
        self.name = name
        self.source = source

    def has(self, key: str) -> bool:
        return (self.name, key) in self.entries

    def get(self, key: str, convert, default=None, required: bool = False):
        if not self.has(key):
            if required:
                raise ValueError(f"{self.source}: missing required key {self.name}.{key}")
            return default
        line_no, raw = self.entries[(self.name, key)]
        try:
            return convert(raw)
        except ValueError as exc:
            raise ValueError(f"{self.source}: line {line_no}: {self.name}.{key}: {exc}") from None

    def line_of(self, key: str) -> int:
        return self.entries[(self.name, key)][0]


def _choice(options):
    def convert(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {tuple(options)}, got {raw!r}")
        return raw
    return convert


def _int_tuple(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip() != ""]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


# ---------------------------------------------------------- run config

@dataclass(frozen=True)
class DataSource:
    """Where training/eval samples come from: a generator or a CSV file."""

    kind: str | None = None
    csv: str | None = None
    n: int = 256
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if (self.kind is None) == (self.csv is None):
            raise ValueError("exactly one of data.kind and data.csv must be set")
        if self.kind is not None and self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {DATASET_KINDS}")
        if self.n < 1:
            raise ValueError(f"data.n must be at least 1, got {self.n}")
        if self.noise < 0:
            raise ValueError(f"data.noise must be nonnegative, got {self.noise}")

    def load(self) -> Dataset:
        if self.kind is not None:
            return gen_data(self.kind, self.n, self.noise, self.seed)
        return load_csv(self.csv)


@dataclass(frozen=True)
class OutputPaths:
    checkpoint: str = "checkpoint.json"
    log: str = "training_log.ndjson"
    metrics: str = "metrics.json"


@dataclass(frozen=True)
class EvalSettings:
    bins: int = 15
    top_k: int | None = None

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError(f"eval.bins must be at least 1, got {self.bins}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    trainer: TrainerConfig
    schedule: ScheduleSpec
    data: DataSource
    output: OutputPaths
    eval_settings: EvalSettings


_RUN_SCHEMA = {
    "model": {"n_inputs", "max_exits", "depth", "width", "in_dim", "out_dim", "task", "seed"},
    "trainer": {"optimizer", "learning_rate", "weight_decay", "clip_norm", "batch_size",
                "steps", "batch_repetition", "log_interval", "seed"},
    "schedule": {"alpha_start", "alpha_end", "temperature_start", "temperature_end",
                 "repetition_start", "repetition_end"},
    "data": {"kind", "csv", "n", "noise", "seed"},
    "output": {"checkpoint", "log", "metrics"},
    "eval": {"bins", "top_k"},
}


def _build(source: str, section: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ValueError(f"{source}: invalid [{section}] settings: {exc}") from None


def parse_config(text: str, source: str = "config") -> RunConfig:
    """Parse a full training-run configuration.

    For generator-backed data the model's in_dim/out_dim/task are filled
    in from the generator's signature; CSV-backed runs must state them.
    """
    entries = _parse_sections(text, _RUN_SCHEMA, source)
    data_sec = _Section(entries, "data", source)
    data = _build(source, "data", DataSource,
                  kind=data_sec.get("kind", _choice(DATASET_KINDS)),
                  csv=data_sec.get("csv", str),
                  n=data_sec.get("n", int, default=256),
                  noise=data_sec.get("noise", float, default=0.0),
                  seed=data_sec.get("seed", int, default=0))

    model_sec = _Section(entries, "model", source)
    in_dim = model_sec.get("in_dim", int)
    out_dim = model_sec.get("out_dim", int)
    task = model_sec.get("task", _choice(TASKS))
    if data.kind is not None:
        gen_in, gen_out, gen_task = kind_signature(data.kind)
        for name, given, derived in (("in_dim", in_dim, gen_in),
                                     ("out_dim", out_dim, gen_out),
                                     ("task", task, gen_task)):
            if given is not None and given != derived:
                line = model_sec.line_of(name)
                raise ValueError(f"{source}: line {line}: model.{name} = {given!r} conflicts "
                                 f"with data.kind = {data.kind} (which implies {derived!r})")
        in_dim, out_dim, task = gen_in, gen_out, gen_task
    else:
        for name, value in (("in_dim", in_dim), ("out_dim", out_dim), ("task", task)):
            if value is None:
                raise ValueError(f"{source}: missing required key model.{name} "
                                 "(required when data comes from a csv)")
    model = _build(source, "model", ModelConfig,
                   n_inputs=model_sec.get("n_inputs", int, required=True),
                   max_exits=model_sec.get("max_exits", int, required=True),
                   depth=model_sec.get("depth", int, required=True),
                   width=model_sec.get("width", int, required=True),
                   in_dim=in_dim, out_dim=out_dim, task=task,
                   seed=model_sec.get("seed", int, default=0))

    trainer_sec = _Section(entries, "trainer", source)
    trainer = _build(source, "trainer", TrainerConfig,
                     optimizer=trainer_sec.get("optimizer", _choice(OPTIMIZERS), default="adam"),
                     learning_rate=trainer_sec.get("learning_rate", float, default=1e-3),
                     weight_decay=trainer_sec.get("weight_decay", float, default=0.0),
                     clip_norm=trainer_sec.get("clip_norm", float, default=5.0),
                     batch_size=trainer_sec.get("batch_size", int, default=32),
                     steps=trainer_sec.get("steps", int, required=True),
                     batch_repetition=trainer_sec.get("batch_repetition", int, default=1),
                     log_interval=trainer_sec.get("log_interval", int, default=100),
                     seed=trainer_sec.get("seed", int, default=0))

    sched_sec = _Section(entries, "schedule", source)
    schedule = _build(source, "schedule", ScheduleSpec,
                      alpha_start=sched_sec.get("alpha_start", float, default=0.0),
                      alpha_end=sched_sec.get("alpha_end", float, default=1.0),
                      temperature_start=sched_sec.get("temperature_start", float, default=1.0),
                      temperature_end=sched_sec.get("temperature_end", float, default=0.01),
                      repetition_start=sched_sec.get("repetition_start", float, default=1.0),
                      repetition_end=sched_sec.get("repetition_end", float, default=0.0),
                      t_end=max(trainer.steps, 1))

    out_sec = _Section(entries, "output", source)
    output = OutputPaths(checkpoint=out_sec.get("checkpoint", str, default="checkpoint.json"),
                         log=out_sec.get("log", str, default="training_log.ndjson"),
                         metrics=out_sec.get("metrics", str, default="metrics.json"))

    eval_sec = _Section(entries, "eval", source)
    eval_settings = _build(source, "eval", EvalSettings,
                           bins=eval_sec.get("bins", int, default=15),
                           top_k=eval_sec.get("top_k", int))
    if eval_settings.top_k is not None and not 1 <= eval_settings.top_k <= model.depth:
        line = eval_sec.line_of("top_k")
        raise ValueError(f"{source}: line {line}: eval.top_k must satisfy "
                         f"1 <= top_k <= {model.depth}, got {eval_settings.top_k}")
    return RunConfig(model=model, trainer=trainer, schedule=schedule, data=data,
                     output=output, eval_settings=eval_settings)


def render_config(config: RunConfig) -> str:
    """Emit a config file that parses back to an equal RunConfig."""
    lines = ["[model]"]
    for key in ("n_inputs", "max_exits", "depth", "width", "in_dim", "out_dim", "task", "seed"):
        lines.append(f"{key} = {getattr(config.model, key)}")
    lines.append("")
    lines.append("[trainer]")
    for key in ("optimizer", "learning_rate", "weight_decay", "clip_norm", "batch_size",
                "steps", "batch_repetition", "log_interval", "seed"):
        lines.append(f"{key} = {getattr(config.trainer, key)}")
    lines.append("")
    lines.append("[schedule]")
    for key in ("alpha_start", "alpha_end", "temperature_start", "temperature_end",
                "repetition_start", "repetition_end"):
        lines.append(f"{key} = {getattr(config.schedule, key)}")
    lines.append("")
    lines.append("[data]")
    if config.data.kind is not None:
        lines.append(f"kind = {config.data.kind}")
    else:
        lines.append(f"csv = {config.data.csv}")
    for key in ("n", "noise", "seed"):
        lines.append(f"{key} = {getattr(config.data, key)}")
    lines.append("")
    lines.append("[output]")
    for key in ("checkpoint", "log", "metrics"):
        lines.append(f"{key} = {getattr(config.output, key)}")
    lines.append("")
    lines.append("[eval]")
    lines.append(f"bins = {config.eval_settings.bins}")
    if config.eval_settings.top_k is not None:
        lines.append(f"top_k = {config.eval_settings.top_k}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------- cost config

@dataclass(frozen=True)
class CostQuery:
    arch: ArchSpec
    n_inputs: int
    assignment: ExitAssignment


_COST_SCHEMA = {
    "arch": {"family", "depth", "features", "feat_last", "in_dim", "out_dim",
             "kernel_size", "height", "width_px", "patch_size", "seq_len"},
    "ensemble": {"n_inputs", "exit_usage"},
}


def parse_cost_config(text: str, source: str = "cost config") -> CostQuery:
    """Parse an architecture/usage description for the cost calculators.

    ``features`` accepts either one value per depth or a single value
    applied at every depth; ``exit_usage`` is per-exit input counts or
    ``all`` for every input at every exit.
    """
    entries = _parse_sections(text, _COST_SCHEMA, source)
    arch_sec = _Section(entries, "arch", source)
    depth = arch_sec.get("depth", int, required=True)
    features = arch_sec.get("features", _int_tuple, required=True)
    if len(features) == 1 and depth > 1:
        features = features * depth
    arch = _build(source, "arch", ArchSpec,
                  family=arch_sec.get("family", _choice(("fc", "conv", "vit")), required=True),
                  depth=depth,
                  features=features,
                  feat_last=arch_sec.get("feat_last", int, required=True),
                  in_dim=arch_sec.get("in_dim", int, required=True),
                  out_dim=arch_sec.get("out_dim", int, required=True),
                  kernel_size=arch_sec.get("kernel_size", int),
                  height=arch_sec.get("height", int),
                  width_px=arch_sec.get("width_px", int),
                  patch_size=arch_sec.get("patch_size", int),
                  seq_len=arch_sec.get("seq_len", int))
    ens_sec = _Section(entries, "ensemble", source)
    n_inputs = ens_sec.get("n_inputs", int, required=True)
    if n_inputs < 1:
        raise ValueError(f"{source}: ensemble.n_inputs must be at least 1, got {n_inputs}")
    raw_usage = ens_sec.get("exit_usage", str, required=True)
    if raw_usage.strip() == "all":
        assignment = ExitAssignment.all_active(n_inputs, depth)
    else:
        line = ens_sec.line_of("exit_usage")
        try:
            assignment = ExitAssignment(_int_tuple(raw_usage))
        except ValueError as exc:
            raise ValueError(f"{source}: line {line}: ensemble.exit_usage: {exc}") from None
    try:
        assignment.validate(n_inputs, depth)
    except ValueError as exc:
        raise ValueError(f"{source}: invalid [ensemble] settings: {exc}") from None
    return CostQuery(arch=arch, n_inputs=n_inputs, assignment=assignment)
