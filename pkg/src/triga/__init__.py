"""Tikhonov-regularized inertial gradient methods with certification and benchmarking tools."""

from .problems import (
    LeastSquares,
    LogisticRegression,
    ObjectiveProblem,
    QuadraticCoupling,
    evaluate,
    min_norm_solution,
)
from .schedules import (
    SolverParameters,
    TikhonovSchedule,
    check_K0_at,
    check_K1,
    default_delta,
    epsilon_at,
    find_k0,
    select_parameters,
)
from .solvers import NadtrMethod, NagMethod, StoppingCriteria, Trace, TrigaMethod, run

__version__ = "0.1.0"
