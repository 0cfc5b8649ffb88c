"""Entropic optimal transport with forbidden source-target pairs.

The main entry points are :class:`ProblemInstance`, :func:`solve` and
:func:`check_kkt`; see the submodules for the individual algorithms.
"""

from .core import (
    IdealPlan,
    InstanceError,
    Kernel,
    ProblemInstance,
    TransportPlan,
    ZeroPattern,
    check_feasibility_exact,
    validate_instance,
)
from .divergence import kl_matrix, kl_scalar, kl_vector, objective
from .scenarios import EvScenarioConfig, generate_ev_instance, generate_random_instance
from .solvers import (
    Algorithm,
    SolveReport,
    SolverConfig,
    Termination,
    solve,
    solve_alg1,
    solve_alg2,
    solve_chizat,
    solve_sk,
)
from .verify import OptimalityReport, check_kkt, check_limit_properties, oracle_minimize

__all__ = [
    "IdealPlan",
    "InstanceError",
    "Kernel",
    "ProblemInstance",
    "TransportPlan",
    "ZeroPattern",
    "check_feasibility_exact",
    "validate_instance",
    "kl_matrix",
    "kl_scalar",
    "kl_vector",
    "objective",
    "EvScenarioConfig",
    "generate_ev_instance",
    "generate_random_instance",
    "Algorithm",
    "SolveReport",
    "SolverConfig",
    "Termination",
    "solve",
    "solve_alg1",
    "solve_alg2",
    "solve_chizat",
    "solve_sk",
    "OptimalityReport",
    "check_kkt",
    "check_limit_properties",
    "oracle_minimize",
]

__version__ = "0.1.0"
