"""Optimal velocity control of a convective Cahn-Hilliard system with
dynamic boundary conditions, double-obstacle constraints, and deep-quench
continuation, on a periodic 2-D strip."""

__version__ = "0.1.0"

from .adjoint import (
    AdjointSolution,
    quench_curvature_norm,
    representation_p_from_q,
    solve_adjoint,
    solve_adjoint_eps,
)
from .control import (
    Control,
    ControlError,
    OptimizeOptions,
    assemble_gradient,
    deep_quench_drive,
    fd_gradient_check,
    optimize,
    project_Uad,
    vi_box_residual,
    x_norm,
)
from .cost import CostSpec, evaluate_cost
from .grid import FieldPair, QuadratureWeights, StripGeometry, StripGrid
from .linops import (
    MeanZeroSolveResult,
    NewtonError,
    NOperator,
    SolverError,
    SparseSystem,
    apply_N,
    newton_damped,
    solve_spd,
)
from .potentials import (
    ObstacleMultiplier,
    QuenchParams,
    SmoothPotential,
    h,
    h_prime,
    h_second,
    obstacle_projection,
    quench_schedule,
    quench_term,
)
from .problem import ProblemSpec, ValidationError, build
from .state import (
    PhysParams,
    SolverOptions,
    StateSolution,
    initial_constant,
    initial_stripe,
    l2q_distance,
    solve_forward,
)

__all__ = [
    "AdjointSolution",
    "Control",
    "ControlError",
    "CostSpec",
    "FieldPair",
    "MeanZeroSolveResult",
    "NewtonError",
    "NOperator",
    "ObstacleMultiplier",
    "OptimizeOptions",
    "PhysParams",
    "ProblemSpec",
    "QuadratureWeights",
    "QuenchParams",
    "SmoothPotential",
    "SolverError",
    "SolverOptions",
    "SparseSystem",
    "StateSolution",
    "StripGeometry",
    "StripGrid",
    "ValidationError",
    "apply_N",
    "assemble_gradient",
    "build",
    "deep_quench_drive",
    "evaluate_cost",
    "fd_gradient_check",
    "h",
    "h_prime",
    "h_second",
    "initial_constant",
    "initial_stripe",
    "l2q_distance",
    "newton_damped",
    "obstacle_projection",
    "optimize",
    "project_Uad",
    "quench_curvature_norm",
    "quench_schedule",
    "quench_term",
    "representation_p_from_q",
    "solve_adjoint",
    "solve_adjoint_eps",
    "solve_forward",
    "solve_spd",
    "vi_box_residual",
    "x_norm",
    "__version__",
]
