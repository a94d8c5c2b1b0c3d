"""Multi-input multi-exit ensemble networks with a learned depth posterior.

One fully connected backbone hosts N input slots and D exit heads; a
per-slot categorical posterior over exits is trained jointly with the
weights under a tempered variational objective.  The package also ships
exact integer parameter/FLOP calculators for fc, conv and vit input
layers and exits, the configuration taxonomy (SE/EE/MIMO/MIMMO/IB), a
metric suite, and a deterministic CLI.
"""

from .autodiff import Tape, Tensor, backward
from .costs import (
    ArchSpec,
    CostReport,
    ExitAssignment,
    classify_config,
    conv_exit_cost,
    conv_input_cost,
    fc_exit_cost,
    fc_input_cost,
    fc_network_params,
    network_cost,
    search_space_sizes,
    vit_exit_cost,
    vit_input_cost,
)
from .datasets import Dataset, gen_data, load_csv, save_csv
from .evaluation import (
    AggregatedPrediction,
    EvalResult,
    MetricReport,
    accuracy,
    cc_ece,
    ece,
    evaluate_dataset,
    evaluate_input,
    f1_macro,
    gaussian_nll,
    mse,
    nll_classification,
)
from .network import ModelConfig, MultiExitNet, PredictionGrid, build_network, split_predictions
from .objective import LossBreakdown, ScheduleSpec, elbo_loss, log_likelihood, schedule_value
from .posterior import (
    DepthPosterior,
    active_exit_union,
    exit_probabilities,
    kl_to_uniform,
    mask_top_k,
    sample_top_k,
)
from .training import (
    TrainerConfig,
    TrainingDiverged,
    TrainResult,
    clip_gradients,
    make_batch,
    train_loop,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "ArchSpec",
    "CostReport",
    "ExitAssignment",
    "classify_config",
    "conv_exit_cost",
    "conv_input_cost",
    "fc_exit_cost",
    "fc_input_cost",
    "fc_network_params",
    "network_cost",
    "search_space_sizes",
    "vit_exit_cost",
    "vit_input_cost",
    "Dataset",
    "gen_data",
    "load_csv",
    "save_csv",
    "AggregatedPrediction",
    "EvalResult",
    "MetricReport",
    "accuracy",
    "cc_ece",
    "ece",
    "evaluate_dataset",
    "evaluate_input",
    "f1_macro",
    "gaussian_nll",
    "mse",
    "nll_classification",
    "ModelConfig",
    "MultiExitNet",
    "PredictionGrid",
    "build_network",
    "split_predictions",
    "LossBreakdown",
    "ScheduleSpec",
    "elbo_loss",
    "log_likelihood",
    "schedule_value",
    "DepthPosterior",
    "active_exit_union",
    "exit_probabilities",
    "kl_to_uniform",
    "mask_top_k",
    "sample_top_k",
    "TrainerConfig",
    "TrainingDiverged",
    "TrainResult",
    "clip_gradients",
    "make_batch",
    "train_loop",
    "train_step",
    "__version__",
]
