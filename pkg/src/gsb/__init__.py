"""Group Lasso and Lasso under strong group sparsity: solvers, spectral checks, simulations."""

__version__ = "0.1.0"

from .core import GroundTruth, GroupStructure, Problem, SolveResult, group_norms, recovery_error, validate_structure
from .solver import SolverConfig, check_kkt, objective, solve_group_lasso, solve_lasso

__all__ = [
    "GroundTruth",
    "GroupStructure",
    "Problem",
    "SolveResult",
    "SolverConfig",
    "check_kkt",
    "group_norms",
    "objective",
    "recovery_error",
    "solve_group_lasso",
    "solve_lasso",
    "validate_structure",
]
