"""prescurv: prescribed-curvature solvers on discrete model manifolds.

The library realizes, at desk scale, the classical sub/supersolution and
variational machinery for prescribing scalar curvature (dim >= 3), scalar
plus mean curvature on manifolds with boundary, and Gauss curvature with
zero geodesic curvature on surfaces, always within a conformal class whose
conformal Laplacian has first eigenvalue zero (or the perturbed sign cases
of the constant-curvature generalizations).

Module map
----------
grid        flat tensor grids, summation-by-parts calculus, quadrature
linalg      shifted/Robin/Neumann-compatible solves, first eigenpair
conformal   curvature transformation laws, necessary conditions, certificates
subsuper    construction and verification of ordered solution sandwiches
iterate     monotone iteration engines (closed and Robin-boundary)
surface2d   constrained variational solver for the 2D Gauss-curvature problem
scenarios   end-to-end drivers returning certificates or classified refusals
cli         batch front end (`prescribe run|verify|classify`)
"""

from .grid import (
    GridManifold,
    ScalarField,
    FieldKind,
    Topology,
    build_torus,
    build_cylinder,
    integrate,
    integrate_boundary,
    laplacian,
    gradient_sq,
    normal_derivative,
    grad_pairing,
)
from .conformal import ConformalConstants, conformal_constants

__all__ = [
    "GridManifold",
    "ScalarField",
    "FieldKind",
    "Topology",
    "build_torus",
    "build_cylinder",
    "integrate",
    "integrate_boundary",
    "laplacian",
    "gradient_sq",
    "normal_derivative",
    "grad_pairing",
    "ConformalConstants",
    "conformal_constants",
]
