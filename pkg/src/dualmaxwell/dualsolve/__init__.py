"""Dual functionals, fibering and critical point searches."""
from .problems import CavityProblem, DualProblem, DualState, FullspaceProblem, ModeMismatchError, PrimalResult
from .search import (
    ConeExitError,
    FlowOptions,
    NonConvergenceError,
    SolveReport,
    bound_state_search,
    detect_parity,
    fiber_scale,
    ground_state_search,
    pseudo_gradient_flow,
    seeded_init,
    symmetrize,
)

__all__ = [
    "CavityProblem", "DualProblem", "DualState", "FullspaceProblem", "ModeMismatchError", "PrimalResult",
    "ConeExitError", "FlowOptions", "NonConvergenceError", "SolveReport", "bound_state_search",
    "detect_parity", "fiber_scale", "ground_state_search", "pseudo_gradient_flow", "seeded_init", "symmetrize",
]


def J_eval(pb: DualProblem, x) -> float:
    """Value of the dual functional at the state vector ``x``."""
    return pb.J(x)


def grad_J(pb: DualProblem, x):
    """Riesz gradient of the dual functional at ``x``."""
    return pb.grad(x)


def dual_to_primal(pb: DualProblem, x) -> PrimalResult:
    return pb.to_primal(x)
