"""Inverse heat-source recovery from final-time data.

Core objects: grids and fields, the elliptic stencil operator, Lanczos
matrix functions, Crank-Nicolson marching, propagated-source quadrature,
and four reconstruction strategies, plus a benchmark harness around a
closed-form test family.
"""

from .grid import Coefficient, Field, Grid, inner_product, norm
from .krylov import (BoundParams, DenseApplier, KrylovApplier, KrylovBasis,
                     apply_expm, apply_geom, choose_rank, dense_expm_oracle,
                     dense_geom_oracle, expm_bound, lanczos)
from .manufactured import (ErrorReport, ManufacturedCase, manufactured_case,
                           measure_errors)
from .operator import (ConvergenceError, EllipticOperator, assemble_operator,
                       solve_spd, spectral_estimates)
from .quadrature import (convolve_increment, convolve_naive_midpoint,
                         convolve_richardson)
from .solvers import (InverseProblem, InverseSolution, SolverConfig,
                      recover_pair, solve, solve_direct, solve_hybrid,
                      solve_pure_arnoldi, solve_shooting)
from .studies import (StudyConfig, StudyResult, arnoldi_decay_study,
                      convergence_study, cost_study)
from .svgplot import Series, line_plot
from .timestepping import (SourceTerm, Trajectory, cn_solve_ivp, cn_step,
                           propagator_norm)

__version__ = "0.1.0"

__all__ = [
    "Grid", "Field", "Coefficient", "inner_product", "norm",
    "EllipticOperator", "assemble_operator", "solve_spd",
    "spectral_estimates", "ConvergenceError",
    "KrylovBasis", "lanczos", "apply_expm", "apply_geom", "BoundParams",
    "expm_bound", "choose_rank", "dense_expm_oracle", "dense_geom_oracle",
    "DenseApplier", "KrylovApplier",
    "SourceTerm", "Trajectory", "cn_step", "cn_solve_ivp", "propagator_norm",
    "convolve_naive_midpoint", "convolve_increment", "convolve_richardson",
    "InverseProblem", "SolverConfig", "InverseSolution", "solve",
    "solve_shooting", "solve_hybrid", "solve_pure_arnoldi", "solve_direct",
    "recover_pair",
    "ManufacturedCase", "manufactured_case", "measure_errors", "ErrorReport",
    "StudyConfig", "StudyResult", "convergence_study", "cost_study",
    "arnoldi_decay_study", "Series", "line_plot",
    "__version__",
]
