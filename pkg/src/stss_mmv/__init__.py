"""Sparse recovery of multiple measurement vectors under a spatio-temporal
spike-and-slab prior, with expectation propagation inference."""

from .bench import ExperimentConfig, aggregate, run_experiment1, run_experiment2
from .ep import Posterior, SolverOptions, solve
from .errors import ConfigurationError, NumericalFailure
from .gaussian import KernelSpec, build_covariance
from .metrics import ScoreReport, nmse, support_f_measure
from .prior import (GroundTruth, MmvProblem, PriorConfig, calibrate_mu0_for_sparsity,
                    sample_problem)
from .problem_io import read_problem, write_problem

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ExperimentConfig", "GroundTruth", "KernelSpec", "MmvProblem",
    "NumericalFailure", "Posterior", "PriorConfig", "ScoreReport", "SolverOptions",
    "aggregate", "build_covariance", "calibrate_mu0_for_sparsity", "nmse", "read_problem",
    "run_experiment1", "run_experiment2", "sample_problem", "solve", "support_f_measure",
    "write_problem",
]
