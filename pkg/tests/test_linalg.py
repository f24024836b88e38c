import numpy as np
import pytest

from prescurv.errors import IncompatibleRHS, KindMismatch
from prescurv.grid import build_cylinder, build_torus, laplacian, normal_derivative
from prescurv.linalg import (
    EigenReport,
    LinearProblem,
    first_eigenpair,
    solve_neumann_compatible,
    solve_shifted,
)


def unit_torus(n=16):
    return build_torus(3, (n, n, n), (1.0, 1.0, 1.0))


def test_constant_solve():
    man = unit_torus()
    u = solve_shifted(LinearProblem(shift_A=1.0, rhs=man.constant_field(1.0), a_coeff=8.0))
    assert np.abs(u.values - 1.0).max() < 1e-12


def test_singular_solve_matches_discrete_eigenvalue():
    man = unit_torus()
    x = man.coordinate_grids()[0]
    s = np.broadcast_to(np.sin(2 * np.pi * x), man.shape)
    u = solve_shifted(LinearProblem(shift_A=0.0, rhs=man.interior_field(s), a_coeff=8.0))
    h = man.spacing[0]
    lam_h = 4.0 / h**2 * np.sin(np.pi * h) ** 2  # discrete symbol of -d^2/dx^2
    assert np.abs(u.values - s / (8.0 * lam_h)).max() < 1e-11
    # and the discrete solution is O(h^2) from the continuum one
    assert np.abs(u.values - s / (8.0 * 4 * np.pi**2)).max() < 2e-2


def test_singular_solve_incompatible_rhs():
    man = unit_torus(8)
    with pytest.raises(IncompatibleRHS):
        solve_shifted(LinearProblem(shift_A=0.0, rhs=man.constant_field(1.0), a_coeff=8.0))


def test_solution_reproduces_rhs():
    rng = np.random.default_rng(1)
    man = unit_torus(8)
    rhs = man.interior_field(rng.standard_normal(man.shape))
    u = solve_shifted(LinearProblem(shift_A=2.5, rhs=rhs, a_coeff=8.0))
    applied = -8.0 * laplacian(u).values + 2.5 * u.values
    assert np.abs(applied - rhs.values).max() <= 1e-10 * (1 + rhs.sup_norm())


def test_robin_solve_reproduces_rhs():
    rng = np.random.default_rng(2)
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    rhs = man.interior_field(rng.standard_normal(man.shape))
    g = man.boundary_field(rng.standard_normal(man.boundary_shape))
    B = 0.7
    u = solve_shifted(LinearProblem(shift_A=1.3, rhs=rhs, a_coeff=8.0, robin_B=B, rhs_boundary=g))
    interior = (-8.0 * laplacian(u).values + 1.3 * u.values - rhs.values)[1:-1]
    assert np.abs(interior).max() <= 1e-9 * (1 + rhs.sup_norm())
    # weak solve ties the boundary rows to the flux defect: check the SBP row
    h0 = man.spacing[0]
    row = (-8.0 * laplacian(u).values + 1.3 * u.values - rhs.values) * (h0 / 2.0)
    bc = 8.0 * (
        normal_derivative(u).values
        + B * np.stack([u.values[0], u.values[-1]])
        - g.values
    )
    combo0 = row[0] + bc[0]
    combo1 = row[-1] + bc[1]
    assert np.abs(combo0).max() <= 1e-9 * (1 + rhs.sup_norm())
    assert np.abs(combo1).max() <= 1e-9 * (1 + rhs.sup_norm())


def test_neumann_compatible_zero_and_error():
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    z = man.constant_field(0.0)
    gb = man.boundary_field(np.zeros(man.boundary_shape))
    u = solve_neumann_compatible(z, gb, a_coeff=8.0)
    assert u.sup_norm() == 0.0
    with pytest.raises(IncompatibleRHS):
        solve_neumann_compatible(man.constant_field(0.3), gb, a_coeff=8.0)


def test_neumann_compatible_mean_subtracted_source():
    rng = np.random.default_rng(4)
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    from prescurv.grid import integrate

    raw = rng.standard_normal(man.shape)
    raw -= np.sum(raw * man.volume_weights) / man.volume
    rhs = man.interior_field(raw)
    gb = man.boundary_field(np.zeros(man.boundary_shape))
    u = solve_neumann_compatible(rhs, gb, a_coeff=8.0)
    assert abs(integrate(u)) < 1e-10
    resid = (-8.0 * laplacian(u).values - rhs.values)[1:-1]
    assert np.abs(resid).max() <= 1e-9 * (1 + rhs.sup_norm())


def test_flat_models_have_zero_first_eigenvalue():
    rep = first_eigenpair(unit_torus())
    assert abs(rep.eigenvalue) <= 1e-10
    assert rep.eigenfunction.values.min() > 0
    assert np.ptp(rep.eigenfunction.values) == 0.0
    repc = first_eigenpair(build_cylinder(3, (17, 16, 16), (1.0, 1.0, 1.0)))
    assert abs(repc.eigenvalue) <= 1e-10
    assert repc.eigenfunction.values.min() > 0


def test_constant_background_shifts_spectrum():
    man = unit_torus(8).with_scalar_curvature(-1.0)
    rep = first_eigenpair(man)
    assert rep.eigenvalue == pytest.approx(-1.0, abs=1e-10)


def test_nontrivial_eigenpair_and_monotonicity():
    man = build_torus(2, (16, 16), (1.0, 1.0))
    x = man.coordinate_grids()[0]
    bg = np.broadcast_to(3.0 * np.sin(2 * np.pi * x), man.shape)
    man = man.with_scalar_curvature(bg)
    rep = first_eigenpair(man)
    assert rep.eigenvalue < 0.0  # oscillating background lowers the bottom
    assert rep.eigenfunction.values.min() > 0
    assert rep.residual <= 1e-10 * (1 + abs(rep.eigenvalue))
    # raising the background pointwise never lowers the eigenvalue
    rng = np.random.default_rng(8)
    bump = np.abs(rng.standard_normal(man.shape)) * 0.2
    rep_up = first_eigenpair(man.with_scalar_curvature(man.coeff_R + bump))
    assert rep_up.eigenvalue >= rep.eigenvalue - 1e-10


def test_eigen_normalization():
    man = build_torus(2, (16, 16), (2.0, 1.0))
    x = man.coordinate_grids()[0]
    man = man.with_scalar_curvature(np.broadcast_to(np.cos(np.pi * x), man.shape))
    rep = first_eigenpair(man)
    v = rep.eigenfunction.values
    l2 = np.sqrt(np.sum(v * v * man.volume_weights))
    assert l2 == pytest.approx(1.0, abs=1e-10)


def test_boundary_shift_negative_class_stays_negative():
    man = build_cylinder(3, (17, 16, 16), (1.0, 1.0, 1.0)).with_scalar_curvature(-1.0)
    rep0 = first_eigenpair(man)
    assert rep0.eigenvalue == pytest.approx(-1.0, abs=1e-10)
    repb = first_eigenpair(man, boundary_shift_beta=0.05)
    assert repb.eigenvalue < 0.0


def test_shift_continuity_toward_unshifted():
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0)).with_scalar_curvature(-1.0)
    base = first_eigenpair(man).eigenvalue
    gaps = []
    for beta in (0.2, 0.1, 0.05, 0.025):
        e = first_eigenpair(man, boundary_shift_beta=beta).eigenvalue
        gaps.append(abs(e - base))
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    man2 = unit_torus(8).with_scalar_curvature(-1.0)
    base2 = first_eigenpair(man2).eigenvalue
    gaps2 = [
        abs(first_eigenpair(man2, extra_shift_beta=b).eigenvalue - base2)
        for b in (0.2, 0.1, 0.05)
    ]
    assert all(g2 < g1 for g1, g2 in zip(gaps2, gaps2[1:]))


def test_rhs_manifold_mismatch_rejected():
    man = unit_torus(8)
    other = build_torus(3, (8, 8, 8), (2.0, 1.0, 1.0))
    rhs = man.constant_field(1.0)
    with pytest.raises(KindMismatch):
        solve_shifted(LinearProblem(shift_A=1.0, rhs=rhs, a_coeff=8.0), other)
