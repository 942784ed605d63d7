"""Stochastic theta methods for index-1 stochastic differential algebraic equations.

The package integrates systems of the form

    A(t) dX_t = F(t, X_t) dt + G(t, X_t) dW_t

where ``A(t)`` is singular (possibly time dependent), using the implicit
theta family with ``theta in [1/2, 1]``, and ships a Monte Carlo harness
that measures strong (mean-square) convergence order against fine-grid
reference solutions on coupled Brownian lattices.
"""

from .linalg import (
    ProjectorBundle,
    SingularMatrixError,
    SvdFactors,
    pinv,
    projectors,
    solve_linear,
    svd,
)
from .newton import NewtonConfig, NewtonOutcome, newton_solve
from .problems import (
    BUILTIN_LABELS,
    ProblemConstants,
    SdaeProblem,
    builtin,
    check_initial_consistency,
    constraint_residual,
    probe_assumptions,
)
from .stepper import (
    StepFailure,
    ThetaConfig,
    Trajectory,
    integrate,
    stepsize_guard,
    stm_residual,
    stm_step,
    trajectory_to_csv,
)
from .inherent import InherentCoefficients, inherent_coeffs, integrate_inherent, solve_constraint
from .paths import BrownianLattice, coarsen, generate, load_lattice, save_lattice
from .experiment import (
    ConvergenceConfig,
    ConvergenceReport,
    DiagnosticsReport,
    diagnostics,
    fit_slope,
    run_convergence,
    strong_error,
)

__all__ = [
    "BUILTIN_LABELS",
    "BrownianLattice",
    "ConvergenceConfig",
    "ConvergenceReport",
    "DiagnosticsReport",
    "InherentCoefficients",
    "NewtonConfig",
    "NewtonOutcome",
    "ProblemConstants",
    "ProjectorBundle",
    "SdaeProblem",
    "SingularMatrixError",
    "StepFailure",
    "SvdFactors",
    "ThetaConfig",
    "Trajectory",
    "builtin",
    "check_initial_consistency",
    "coarsen",
    "constraint_residual",
    "diagnostics",
    "fit_slope",
    "generate",
    "inherent_coeffs",
    "integrate",
    "integrate_inherent",
    "load_lattice",
    "newton_solve",
    "pinv",
    "probe_assumptions",
    "projectors",
    "run_convergence",
    "save_lattice",
    "solve_constraint",
    "solve_linear",
    "stepsize_guard",
    "stm_residual",
    "stm_step",
    "strong_error",
    "svd",
    "trajectory_to_csv",
]
