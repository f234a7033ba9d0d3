"""Tug-of-war game values and the mixed Dirichlet/Neumann infinity-Laplacian."""

from .dpp import NoConvergence, SolverConfig, ValueField, dpp_residual_field, solve_dpp
from .expr import lipschitz_on, parse
from .game import Strategy, estimate_value, simulate, step
from .geometry import (
    Disk,
    DomainSpec,
    GridDomain,
    NodeClass,
    Polygon,
    Rectangle,
    check_domain_hypothesis,
    discretize,
    neighborhood,
)
from .problem import ProblemFile, load_problem, run_convergence
from .verify import (
    QuadraticDistanceFn,
    check_comparison,
    comparison_sweep,
    grad_and_infinity_laplacian_fd,
    residual_report,
)

__version__ = "0.1.0"
