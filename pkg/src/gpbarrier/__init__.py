"""Permissible strategy sets for unknown stochastic systems via GP learning and stochastic barriers."""
from .barrier import BarrierCertificate, synthesize_barrier, verify_certificate, worst_case_expectation
from .geometry import Box, Grid, StateControlPartition, grid_partition
from .gp import ErrorBoundConfig, GPModel, KernelConfig
from .pruning import Infeasible, PermissibleStrategySet, control_invariant_set, synthesize_permissible_set
from .systems import Dataset, NoiseModel, SystemModel, generate_dataset, load_dataset, save_dataset, step
from .transitions import TransitionIntervalMatrix, build_matrix
from .validation import ValidationReport, adversarial_rollout, monte_carlo

__all__ = [
    "BarrierCertificate", "Box", "Dataset", "ErrorBoundConfig", "GPModel", "Grid", "Infeasible", "KernelConfig",
    "NoiseModel", "PermissibleStrategySet", "StateControlPartition", "SystemModel", "TransitionIntervalMatrix",
    "ValidationReport", "adversarial_rollout", "build_matrix", "control_invariant_set", "generate_dataset",
    "grid_partition", "load_dataset", "monte_carlo", "save_dataset", "step", "synthesize_barrier",
    "synthesize_permissible_set", "verify_certificate", "worst_case_expectation",
]
__version__ = "0.1.0"
