"""Configuration, staged experiment runs, figure presets and the command line."""

from .config import ExperimentConfig, load_config, parse_config
from .figures import FIGURES, reproduce_figure
from .run import RunManifest, RunResult, StageError, run_experiment

__all__ = [
    "ExperimentConfig",
    "FIGURES",
    "RunManifest",
    "RunResult",
    "StageError",
    "load_config",
    "parse_config",
    "reproduce_figure",
    "run_experiment",
]
