"""Experiment harness: config validation, runner, scaling studies and acceptance checks."""

from .config import ConfigError, ExperimentConfig, load_config, validate_config
from .runner import RunError, RunReport, run

__all__ = ["ConfigError", "ExperimentConfig", "RunError", "RunReport", "load_config", "run", "validate_config"]
