from .grid import PolicyPath, PolicySurface, SolverGrid, ValueSurface
from .solver import (
    DEFAULT_CAP_FACTOR,
    HJBSolver,
    NumericalError,
    SolverError,
    default_penalty,
    extract_policy_path,
    solve,
)
from .verify import (
    ChiSquareResult,
    ConvergenceRow,
    UnsupportedSpecError,
    compare_policies,
    convergence_study,
    oracle_error,
    price_independence_check,
    row_residuals,
)

__all__ = [
    "SolverGrid",
    "ValueSurface",
    "PolicySurface",
    "PolicyPath",
    "HJBSolver",
    "SolverError",
    "NumericalError",
    "DEFAULT_CAP_FACTOR",
    "default_penalty",
    "solve",
    "extract_policy_path",
    "ConvergenceRow",
    "ChiSquareResult",
    "UnsupportedSpecError",
    "convergence_study",
    "compare_policies",
    "price_independence_check",
    "row_residuals",
    "oracle_error",
]
