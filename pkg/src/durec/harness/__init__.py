"""Experiment harness: config files, pipeline stages and the CLI."""

from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from .pipeline import (OnlineResult, StageError, SweepResult, run_offline, run_online,
                       stage_evaluate, stage_pretrain, stage_report, stage_retrieve,
                       stage_sweep, sweep)

__all__ = [
    "ConfigError", "ExperimentConfig", "dump_config", "load_config", "parse_config",
    "OnlineResult", "StageError", "SweepResult", "run_offline", "run_online",
    "stage_evaluate", "stage_pretrain", "stage_report", "stage_retrieve", "stage_sweep",
    "sweep",
]
