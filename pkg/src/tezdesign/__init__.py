"""2D TEz metasurface inverse design: BEM forward/adjoint solver, boundary-
integral gradients of exit-line cost functionals with respect to per-atom
affine parameters, and a quasi-Newton design driver."""

from .geometry import (
    AffineParams,
    BoundaryMesh,
    Circle,
    GeometryError,
    Polygon,
    RoundedRectangle,
    build_boundary,
    build_mesh,
)
from .costs import CostSpec, LineField, build_target_focus, evaluate_cost
from .gradient import ActiveParams
from .optimize import OptimizeConfig, evaluate_design, run_design
from .solver import (
    Dipole,
    ExitLine,
    LineCurrent,
    PlaneWave,
    Scene,
    SolverError,
    assemble,
    boundary_E,
    evaluate_E,
    evaluate_H,
    solve,
)

__version__ = "0.1.0"
