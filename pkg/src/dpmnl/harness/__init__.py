"""Simulation harness: configs, environments, replicated runs and CSV output."""
from .config import ConfigError, EnvSpec, ExperimentConfig, resolve
from .emit import summarize_and_emit
from .env import fit_ground_truth, generate_environment
from .runner import ResultsTable, run, run_replicate

__all__ = [
    "ConfigError", "EnvSpec", "ExperimentConfig", "ResultsTable", "fit_ground_truth",
    "generate_environment", "resolve", "run", "run_replicate", "summarize_and_emit",
]
