"""Simulation studies: data generating processes, replication driver and reports."""

from rifl.simulation.experiment import (
    ExperimentConfig,
    ExperimentReport,
    MethodSummary,
    run_experiment,
    run_rho_sensitivity,
    run_sampling_check,
)
from rifl.simulation.scenarios import Scenario, ScenarioKind, generate

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "MethodSummary",
    "Scenario",
    "ScenarioKind",
    "generate",
    "run_experiment",
    "run_rho_sensitivity",
    "run_sampling_check",
]
