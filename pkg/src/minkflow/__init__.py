"""Numerical solvers for the planar L_p Gauss dual Minkowski problem."""

from .dual_measure import (
    DiscreteMeasure,
    MeasureDensity,
    measure_density_grid,
    measure_of_polygon,
    total_mass,
    verify_variational_formula,
    weak_convergence_study,
)
from .errors import *  # noqa: F401,F403
from .flow_solver import (
    FlowConfig,
    FlowResult,
    FlowStatus,
    check_admissibility,
    lyapunov_phi,
    ma_residual,
    run_flow,
    uniqueness_harness,
)
from .gauss_integrals import Exponents, quermassintegral, tail_integral, tail_integral_F
from .sphere_geom import (
    ConvexBodyGrid,
    GridFunction,
    Polygon,
    certify_convex,
    polar_body,
    support_of_polygon,
    wulff_shape,
)
from .variational_solver import VariationalConfig, el_residual, objective_phi, solve_variational

__version__ = "0.1.0"
