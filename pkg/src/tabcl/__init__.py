"""Continual learning on tabular streams with adaptive input normalization."""

from .config import ConfigError, RunConfig, build_config, load_config
from .data import DriftConfig, ExperienceStream, FeatureMatrix, chunk_stream, generate_drift_stream
from .harness import RunLog, emit_results, run_experiment, run_grid
from .metrics import AccuracyMatrix, accuracy, auroc, average_accuracy, average_forgetting, forgetting
from .nn import AdamState, Mlp, adam_step, bce_loss, threshold
from .normalization import (
    CleanNormalizer,
    ContinualNormalizer,
    GlobalNormalizer,
    LocalNormalizer,
    MinMaxBounds,
    minmax_transform,
)
from .strategies import ReservoirBuffer, agem_project, ewc_consolidate, ewc_penalty, replay_mix

__version__ = "0.1.0"
