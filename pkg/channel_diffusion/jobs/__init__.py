"""
Batch jobs for channel_diffusion.

- experiment_runner: train-on-X / test-on-Y estimation sweeps with CSV output
"""

from .experiment_runner import (
    CellFailedError,
    DuplicateExperimentError,
    ExperimentError,
    MissingArtifactError,
    aggregate_nmse,
    expand_grid,
    load_experiment_config,
    run_experiment,
    sweep,
)

__all__ = [
    "CellFailedError",
    "DuplicateExperimentError",
    "ExperimentError",
    "MissingArtifactError",
    "aggregate_nmse",
    "expand_grid",
    "load_experiment_config",
    "run_experiment",
    "sweep",
]
