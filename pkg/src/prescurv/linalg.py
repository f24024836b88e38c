"""Sparse elliptic solves and first-eigenpair computation on grid manifolds.

All systems are assembled weakly against the summation-by-parts energy, so
they are symmetric in the Euclidean inner product and solved matrix-free by
Jacobi-preconditioned conjugate gradients.  Robin boundary data is folded in
through the boundary quadrature, which keeps the discrete Green identity
exact and therefore keeps every integral identity checked downstream at
solver accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleRHS, KindMismatch, NoBoundary, NoConvergence
from .grid import (
    FieldKind,
    GridManifold,
    ScalarField,
    laplacian_values,
)

CG_TOL = 1e-11
CG_MAX_ITER = 20000


@dataclass
class LinearProblem:
    """Shifted conformal-Laplacian solve  (-a lap + A) u = rhs  with optional
    Robin data  du/dnu + B u = rhs_boundary  on a cylinder."""

    shift_A: float
    rhs: ScalarField
    a_coeff: float
    robin_B: float = 0.0
    rhs_boundary: ScalarField | None = None

    def __post_init__(self):
        if not self.rhs.is_interior:
            raise KindMismatch("rhs must be an interior field")
        man = self.rhs.manifold
        if not man.is_cylinder:
            if self.robin_B != 0.0 or self.rhs_boundary is not None:
                raise NoBoundary("Robin data supplied for a torus problem")
        if self.shift_A < 0 or self.robin_B < 0:
            raise ValueError("shifts must be nonnegative")


@dataclass
class EigenReport:
    eigenvalue: float
    eigenfunction: ScalarField
    iterations: int
    residual: float


# ---------------------------------------------------------------------------
# weak-form operator pieces


def _boundary_mask_weights(man: GridManifold) -> np.ndarray:
    """Array with the boundary quadrature weight at boundary nodes, 0 inside."""
    w = np.zeros(man.shape)
    if man.is_cylinder:
        w[0] = man.boundary_weight
        w[-1] = man.boundary_weight
    return w


def _scatter_boundary(man: GridManifold, bvals: np.ndarray) -> np.ndarray:
    out = np.zeros(man.shape)
    out[0] = bvals[0]
    out[-1] = bvals[1]
    return out


class _WeakOperator:
    """Euclidean-symmetric application  v -> a*(-lap_N v)*vol + zeroth-order terms.

    ``interior_coeff`` is an array (variable zeroth-order coefficient) and
    ``boundary_coeff`` either a scalar or a boundary-shaped array multiplying
    the boundary quadrature.
    """

    def __init__(self, man, a_coeff, interior_coeff, boundary_coeff=0.0):
        self.man = man
        self.a = float(a_coeff)
        self.vol = man.volume_weights
        self.interior = np.broadcast_to(np.asarray(interior_coeff, dtype=float), man.shape)
        self.bweights = _boundary_mask_weights(man)
        if man.is_cylinder:
            bc = np.broadcast_to(np.asarray(boundary_coeff, dtype=float), man.boundary_shape)
            self.bcoeff = _scatter_boundary(man, bc)
        else:
            self.bcoeff = np.zeros(man.shape)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = -self.a * laplacian_values(self.man, v, "neumann") * self.vol
        out += self.interior * v * self.vol
        out += self.a * self.bcoeff * v * self.bweights
        return out

    def diagonal(self) -> np.ndarray:
        lap_diag = sum(2.0 / h**2 for h in self.man.spacing)
        d = (self.a * lap_diag + self.interior) * self.vol
        d = d + self.a * self.bcoeff * self.bweights
        return d


def _pcg(apply_op, b, diag, tol_fn, max_iter=CG_MAX_ITER, project=None):
    """Jacobi-preconditioned CG; ``tol_fn(x, r)`` decides convergence.

    ``project`` removes a known nullspace component from iterates/residuals.
    Returns (x, iterations); raises NoConvergence when the budget runs out.
    """
    x = np.zeros_like(b)
    r = b.copy()
    if project is not None:
        r = project(r)
    if tol_fn(x, r):
        return x, 0
    inv_diag = 1.0 / diag
    z = r * inv_diag
    p = z.copy()
    rz = float(np.sum(r * z))
    for it in range(1, max_iter + 1):
        Ap = apply_op(p)
        if project is not None:
            Ap = project(Ap)
        pAp = float(np.sum(p * Ap))
        if pAp <= 0.0:
            raise NoConvergence(
                "conjugate gradient met non-positive curvature", iterations=it
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            x = project(x)
            r = project(r)
        if tol_fn(x, r):
            return x, it
        z = r * inv_diag
        rz_new = float(np.sum(r * z))
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise NoConvergence(
        "conjugate gradient exhausted its iteration budget",
        iterations=max_iter,
        residual=float(np.abs(r).max()),
    )


def _euclid_mean_project(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


# ---------------------------------------------------------------------------
# public solvers


def solve_shifted(problem: LinearProblem, man: GridManifold | None = None,
                  tol: float = CG_TOL, max_iter: int = CG_MAX_ITER) -> ScalarField:
    """Solve the shifted problem; singular (A=0, zero-flux) cases return the
    zero-mean representative and demand a compatible right-hand side."""
    rhs = problem.rhs
    man = rhs.manifold if man is None else man
    if not rhs.manifold.same_geometry(man):
        raise KindMismatch("rhs lives on a different manifold")
    a = problem.a_coeff
    A = problem.shift_A
    B = problem.robin_B

    op = _WeakOperator(man, a, np.full(man.shape, A), B)
    b = rhs.values * man.volume_weights
    scale = 1.0 + float(np.abs(rhs.values).max())
    if man.is_cylinder and problem.rhs_boundary is not None:
        g = problem.rhs_boundary
        if g.is_interior:
            raise KindMismatch("rhs_boundary must be a boundary field")
        b = b + a * _scatter_boundary(man, g.values) * _boundary_mask_weights(man)
        scale += float(np.abs(g.values).max())

    singular = A == 0.0 and (not man.is_cylinder or B == 0.0)
    project = None
    if singular:
        defect = float(b.sum())
        if abs(defect) > 1e-10 * scale * man.volume:
            raise IncompatibleRHS(
                f"singular system with incompatible data (defect {defect:.3e})",
                defect=defect,
            )
        project = _euclid_mean_project
        b = project(b)

    vol = man.volume_weights

    def tol_fn(x, r):
        return float(np.abs(r / vol).max()) <= tol * scale

    x, _ = _pcg(op.apply, b, op.diagonal(), tol_fn, max_iter, project)
    if singular:
        x = x - float(np.sum(x * vol)) / man.volume
    return man.interior_field(x)


def solve_neumann_compatible(rhs: ScalarField, rhs_boundary: ScalarField,
                             a_coeff: float, tol: float = CG_TOL,
                             max_iter: int = CG_MAX_ITER) -> ScalarField:
    """Zero-mean solve of  -a lap u = rhs,  du/dnu = rhs_boundary  on a cylinder.

    The discrete divergence theorem makes the system solvable exactly when
    the boundary flux integral balances the interior source.
    """
    man = rhs.manifold
    if not man.is_cylinder:
        raise NoBoundary("Neumann-compatible solve needs a cylinder")
    if rhs_boundary.is_interior:
        raise KindMismatch("rhs_boundary must be a boundary field")
    from .grid import integrate, integrate_boundary  # local import to avoid cycle

    defect = integrate(rhs) + a_coeff * integrate_boundary(rhs_boundary)
    scale = 1.0 + rhs.sup_norm() + a_coeff * rhs_boundary.sup_norm()
    if abs(defect) > 1e-10 * scale * man.volume:
        raise IncompatibleRHS(
            f"flux/source balance violated (defect {defect:.3e})", defect=defect
        )
    op = _WeakOperator(man, a_coeff, np.zeros(man.shape), 0.0)
    b = rhs.values * man.volume_weights
    b = b + a_coeff * _scatter_boundary(man, rhs_boundary.values) * _boundary_mask_weights(man)
    b = _euclid_mean_project(b)
    vol = man.volume_weights

    def tol_fn(x, r):
        return float(np.abs(r / vol).max()) <= tol * scale

    x, _ = _pcg(op.apply, b, op.diagonal(), tol_fn, max_iter, _euclid_mean_project)
    x = x - float(np.sum(x * vol)) / man.volume
    return man.interior_field(x)


# ---------------------------------------------------------------------------
# first eigenpair


def _robin_coefficient(man: GridManifold, a: float, boundary_shift: float):
    """Boundary zeroth-order coefficient of the conformal Robin form."""
    if not man.is_cylinder:
        return 0.0
    if man.dim == 2:
        base = man.coeff_sigma if man.coeff_sigma is not None else 0.0
        return np.asarray(base) + boundary_shift
    from .conformal import conformal_constants

    cc = conformal_constants(man.dim)
    return (2.0 / cc.p_minus_2) * (np.asarray(man.coeff_h) + boundary_shift)


def first_eigenpair(man: GridManifold, extra_shift_beta: float = 0.0,
                    boundary_shift_beta: float = 0.0, tol: float = 1e-10,
                    max_restarts: int = 5, max_inner: int = 200) -> EigenReport:
    """Smallest eigenvalue of the (possibly shifted) conformal Laplacian.

    Interior operator  -a lap + (R + beta_int); on a cylinder the Robin form
    couples the boundary through  (2/(p-2)) (h + beta_bnd).  Inverse power
    iteration from a positive constant guess; the eigenfunction is returned
    L2(dVol)-normalized and sign-normalized positive.
    """
    if man.dim == 2:
        a = 1.0
    else:
        from .conformal import conformal_constants

        a = conformal_constants(man.dim).a
    interior = man.coeff_R + extra_shift_beta
    op = _WeakOperator(man, a, interior, _robin_coefficient(man, a, boundary_shift_beta))
    vol = man.volume_weights

    def w_norm(v):
        return float(np.sqrt(np.sum(v * v * vol)))

    def rayleigh(v):
        return float(np.sum(v * op.apply(v))) / float(np.sum(v * v * vol))

    v = np.ones(man.shape)
    v /= w_norm(v)
    rho = rayleigh(v)
    total_iters = 0

    def eig_residual(v, rho):
        r = (op.apply(v) - rho * v * vol) / vol
        return float(np.abs(r).max())

    res = eig_residual(v, rho)
    scale = 1.0 + abs(rho)
    if res <= tol * scale:
        f = man.interior_field(v)
        return EigenReport(rho, f, total_iters, res)

    sigma = rho - 1.0
    for restart in range(max_restarts + 1):
        shifted = _WeakOperator(man, a, interior - sigma, _robin_coefficient(man, a, boundary_shift_beta))
        converged = False
        for _ in range(max_inner):
            b = v * vol

            def tol_fn(x, r):
                return float(np.abs(r / vol).max()) <= 1e-12 * (1.0 + float(np.abs(b / vol).max()))

            try:
                z, _ = _pcg(shifted.apply, b, np.abs(shifted.diagonal()) + 1e-300, tol_fn)
            except NoConvergence:
                # shift not below the spectrum (or stagnation): back off and restart
                break
            v = z / w_norm(z)
            rho = rayleigh(v)
            total_iters += 1
            res = eig_residual(v, rho)
            scale = 1.0 + abs(rho)
            if res <= tol * scale:
                converged = True
                break
        if converged:
            break
        sigma = min(sigma, rho) - 2.0 ** (restart + 1)
    else:
        raise NoConvergence(
            "inverse power iteration did not converge",
            iterations=total_iters,
            residual=res,
        )

    flat_idx = int(np.argmax(np.abs(v)))
    if v.reshape(-1)[flat_idx] < 0:
        v = -v
    if v.min() <= 0:
        raise NoConvergence(
            "first eigenfunction failed the positivity invariant", residual=res
        )
    return EigenReport(rho, man.interior_field(v), total_iters, res)
