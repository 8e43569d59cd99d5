"""Robust transceiver design for MIMO interference channels with imperfect CSI."""

from .exceptions import (ConfigError, DegenerateStream, InvalidArgument, NumericFailure,
                         RobustICError)
from .model import (ChannelSet, FilterSet, NetworkConfig, RngStream, init_filters,
                    sample_network)
from .solvers import SolverKind, alternate_solve, solve_batch
from .experiments import (ExperimentResult, Scenario, preset, run_approx_accuracy,
                          run_convergence, run_sum_rate_sweep, run_variance_table)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet",
    "ConfigError",
    "DegenerateStream",
    "ExperimentResult",
    "FilterSet",
    "InvalidArgument",
    "NetworkConfig",
    "NumericFailure",
    "RngStream",
    "RobustICError",
    "Scenario",
    "SolverKind",
    "alternate_solve",
    "init_filters",
    "preset",
    "run_approx_accuracy",
    "run_convergence",
    "run_sum_rate_sweep",
    "run_variance_table",
    "sample_network",
    "solve_batch",
]
