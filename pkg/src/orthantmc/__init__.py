"""Probabilistic solver for parabolic Robin problems on the nonnegative
orthant: reflected-path Monte Carlo estimators, closed-form local-time
densities, a decomposition into boundary-data and homogenized sub-problems,
and a finite-difference oracle for validation."""

from .config import Budgets, ExperimentConfig, FDSettings, load_config
from .densities import (
    ComponentLaw,
    h_function,
    h_function_dx,
    joint_density,
    local_time_exp_moment,
    running_max_cdf,
    running_max_density,
)
from .errors import OrthantError
from .estimators import (
    CrossDerivativeLattice,
    EstimateResult,
    QueryPoint,
    estimate_psi,
    estimate_u_decomposed,
    estimate_u_naive,
    estimate_varphi_factorized,
    estimate_varphi_gradient,
    estimate_varphi_stieltjes,
    robin_residual,
    varphi_cross_second_derivative,
)
from .fd_oracle import FDSolution, Grid2D, compare, solve_decomposed_fd, solve_robin_fd
from .harness import convergence_study, make_manufactured_problem, run
from .model import ModelParams, ProblemSpec, problem_from_strings, validate
from .paths import TimeGrid, make_grid, skorokhod_reflect

__version__ = "0.1.0"

__all__ = [
    "Budgets",
    "ComponentLaw",
    "CrossDerivativeLattice",
    "EstimateResult",
    "ExperimentConfig",
    "FDSettings",
    "FDSolution",
    "Grid2D",
    "ModelParams",
    "OrthantError",
    "ProblemSpec",
    "QueryPoint",
    "TimeGrid",
    "compare",
    "convergence_study",
    "estimate_psi",
    "estimate_u_decomposed",
    "estimate_u_naive",
    "estimate_varphi_factorized",
    "estimate_varphi_gradient",
    "estimate_varphi_stieltjes",
    "h_function",
    "h_function_dx",
    "joint_density",
    "load_config",
    "local_time_exp_moment",
    "make_grid",
    "make_manufactured_problem",
    "problem_from_strings",
    "robin_residual",
    "run",
    "running_max_cdf",
    "running_max_density",
    "skorokhod_reflect",
    "solve_decomposed_fd",
    "solve_robin_fd",
    "validate",
    "varphi_cross_second_derivative",
]
