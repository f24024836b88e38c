import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prescurv.conformal import (
    NecessaryCase,
    certify_scalar_solution,
    check_necessary,
    conformal_constants,
    conformal_gauss_curvature,
    conformal_geodesic_curvature,
    conformal_mean_curvature,
    conformal_scalar_curvature,
    curvature_budget,
    invariance_residual,
    kw_identities,
)
from prescurv.errors import DimensionMismatch, NoBoundary, NonPositiveInput
from prescurv.grid import build_cylinder, build_torus, laplacian


def test_constants_table():
    for n, a, p in ((3, 8.0, 6.0), (4, 6.0, 4.0), (6, 5.0, 3.0)):
        cc = conformal_constants(n)
        assert cc.a == pytest.approx(a)
        assert cc.p == pytest.approx(p)
        assert cc.two_minus_p == pytest.approx(-4.0 / (n - 2))
    with pytest.raises(DimensionMismatch):
        conformal_constants(2)


def dense_laplacian_3d(vals, h):
    """Independent literal-loop periodic Laplacian used as an oracle."""
    n0, n1, n2 = vals.shape
    out = np.zeros_like(vals)
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                out[i, j, k] = (
                    vals[(i + 1) % n0, j, k]
                    + vals[(i - 1) % n0, j, k]
                    + vals[i, (j + 1) % n1, k]
                    + vals[i, (j - 1) % n1, k]
                    + vals[i, j, (k + 1) % n2]
                    + vals[i, j, (k - 1) % n2]
                    - 6.0 * vals[i, j, k]
                ) / h**2
    return out


def test_scalar_curvature_trivial_and_constant():
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    assert conformal_scalar_curvature(man.constant_field(1.0)).sup_norm() == 0.0
    man_r = man.with_scalar_curvature(0.7)
    c = 1.9
    cc = conformal_constants(3)
    rec = conformal_scalar_curvature(man_r.constant_field(c))
    assert np.allclose(rec.values, 0.7 * c ** (2 - cc.p), rtol=1e-13)


def test_scalar_curvature_matches_independent_stencil():
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    x = man.coordinate_grids()[0]
    u = man.interior_field(np.broadcast_to(1.0 + 0.3 * np.sin(2 * np.pi * x), man.shape))
    rec = conformal_scalar_curvature(u)
    cc = conformal_constants(3)
    dense = dense_laplacian_3d(u.values, man.spacing[0])
    expected = -cc.a * dense * u.values ** (1 - cc.p)
    assert np.abs(rec.values - expected).max() <= 1e-12 * (1 + np.abs(expected).max())


def test_scalar_curvature_rejects_nonpositive():
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    vals = np.ones(man.shape)
    vals[2, 3, 4] = -0.1
    with pytest.raises(NonPositiveInput) as exc:
        conformal_scalar_curvature(man.interior_field(vals))
    assert exc.value.node == (2, 3, 4)


def test_mean_curvature_constants():
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    assert conformal_mean_curvature(man.constant_field(1.0)).sup_norm() == 0.0
    hman = man.with_mean_curvature(0.4)
    c = 2.2
    cc = conformal_constants(3)
    rec = conformal_mean_curvature(hman.constant_field(c))
    assert np.allclose(rec.values, 0.4 * c ** (1 - cc.p / 2), rtol=1e-13)


def test_mean_curvature_neumann_oracle():
    # fields constant along the bounded axis have exactly zero outward flux
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    y = man.coordinate_grids()[1]
    u = man.interior_field(np.broadcast_to(1.0 + 0.2 * np.sin(2 * np.pi * y), man.shape))
    assert conformal_mean_curvature(u).sup_norm() <= 1e-13


def test_gauss_curvature_identity_and_constants():
    man = build_torus(2, (8, 8), (1.0, 1.0)).with_gauss_curvature(0.3)
    rec = conformal_gauss_curvature(man.constant_field(0.0))
    assert np.allclose(rec.values, 0.3, rtol=0, atol=1e-15)
    man0 = build_torus(2, (8, 8), (1.0, 1.0))
    assert conformal_gauss_curvature(man0.constant_field(1.3)).sup_norm() == 0.0
    with pytest.raises(DimensionMismatch):
        conformal_gauss_curvature(build_torus(3, (8, 8, 8), (1, 1, 1)).constant_field(0.0))


def test_gauss_curvature_harmonic_oracle():
    # linear fields along the bounded axis are discretely harmonic
    man = build_cylinder(2, (9, 8), (1.0, 1.0))
    x = man.coordinate_grids()[0]
    u = man.interior_field(np.broadcast_to(0.3 * x - 0.1, man.shape))
    assert conformal_gauss_curvature(u).sup_norm() <= 1e-13
    sigma = conformal_geodesic_curvature(u)
    # outward derivative is -0.3 on the left slice, +0.3 on the right
    assert np.allclose(sigma.values[0], -0.3 * np.exp(0.1), rtol=1e-12)
    assert np.allclose(sigma.values[1], 0.3 * np.exp(-0.2), rtol=1e-12)


def test_check_necessary_cases():
    man = build_torus(3, (16, 16, 16), (1.0, 1.0, 1.0))
    v = check_necessary(man.constant_field(0.0))
    assert v.case is NecessaryCase.IDENTICALLY_ZERO
    x = man.coordinate_grids()[0]
    s = man.interior_field(np.broadcast_to(np.sin(2 * np.pi * x) - 0.2, man.shape))
    v = check_necessary(s)
    assert v.case is NecessaryCase.ADMISSIBLE
    assert v.mean_S == pytest.approx(-0.2, abs=1e-12)
    v = check_necessary(man.constant_field(1.0))
    assert v.case is NecessaryCase.VIOLATION
    assert "sign" in v.reason
    # sign change but positive mean
    s2 = man.interior_field(np.broadcast_to(np.sin(2 * np.pi * x) + 0.2, man.shape))
    v2 = check_necessary(s2)
    assert v2.case is NecessaryCase.VIOLATION
    assert "mean" in v2.reason


@settings(max_examples=25, deadline=None)
@given(c=st.floats(1e-6, 1e6, allow_nan=False))
def test_check_necessary_scale_covariant(c):
    man = build_torus(2, (8, 8), (1.0, 1.0))
    x = man.coordinate_grids()[0]
    base = np.broadcast_to(np.sin(2 * np.pi * x) - 0.3, man.shape)
    v1 = check_necessary(man.interior_field(base))
    v2 = check_necessary(man.interior_field(c * base))
    assert v1.case is v2.case


def test_kw_identities_trivial():
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    orth, gap = kw_identities(man.constant_field(1.0), man.constant_field(0.0))
    assert orth == 0.0
    assert gap == 0.0


def test_kw_identities_manufactured_exact():
    man = build_torus(3, (16, 16, 16), (1.0, 1.0, 1.0))
    cc = conformal_constants(3)
    g = man.coordinate_grids()
    u_vals = 1.0 + 0.4 * np.sin(2 * np.pi * g[0]) * np.sin(2 * np.pi * g[1])
    u = man.interior_field(np.broadcast_to(u_vals, man.shape))
    S = man.interior_field(
        -cc.a * laplacian(u).values * u.values ** (1 - cc.p)
    )
    orth, gap = kw_identities(u, S)
    scale = 1 + S.sup_norm()
    assert abs(orth) <= 1e-12 * scale
    assert gap <= 1e-11 * scale


def test_round_trip_certificate():
    # defining S from a positive factor makes that factor a zero-residual solution
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    g = man.coordinate_grids()
    u = man.interior_field(
        np.broadcast_to(1.0 + 0.3 * np.cos(2 * np.pi * g[1]), man.shape)
    )
    S = conformal_scalar_curvature(u)
    cert = certify_scalar_solution(u, S)
    assert cert.residual_interior <= 1e-12 * (1 + S.sup_norm())
    assert cert.min_u > 0
    assert cert.valid


def test_budget_examples():
    man = build_cylinder(3, (9, 8, 8), (1.0, 1.0, 1.0))
    zero_b = man.boundary_field(np.zeros(man.boundary_shape))
    ok, lhs, rhs = curvature_budget(man.constant_field(0.0), zero_b)
    assert ok and lhs == 0.0 and rhs == 0.0
    ok, lhs, rhs = curvature_budget(man.constant_field(-1.0), zero_b)
    assert not ok
    with pytest.raises(NoBoundary):
        curvature_budget(
            build_torus(3, (8, 8, 8), (1, 1, 1)).constant_field(0.0),
            zero_b,
        )


def test_invariance_residual_constants_and_refinement():
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0))
    g = man.coordinate_grids()
    u = man.interior_field(np.broadcast_to(np.sin(2 * np.pi * g[0]), man.shape))
    # identity factor and constant factors cancel to rounding
    assert invariance_residual(man.constant_field(1.0), u) <= 1e-10
    assert invariance_residual(man.constant_field(2.3), u) <= 1e-10

    res = []
    for n in (16, 32):
        m = build_torus(3, (n, n, n), (1.0, 1.0, 1.0))
        gg = m.coordinate_grids()
        # phi and u must share an axis so the cross-gradient term is active
        phi = m.interior_field(
            np.broadcast_to(1.0 + 0.2 * np.sin(2 * np.pi * gg[0]), m.shape)
        )
        uu = m.interior_field(
            np.broadcast_to(
                np.cos(2 * np.pi * gg[0]) * np.cos(2 * np.pi * gg[1]) + 0.5, m.shape
            )
        )
        res.append(invariance_residual(phi, uu))
    assert 3.5 <= res[0] / res[1] <= 4.5


def test_covariance_exponent_selected_by_constant_test():
    # exponent e on the right side: only e = 1-p cancels constant factors
    man = build_torus(3, (8, 8, 8), (1.0, 1.0, 1.0)).with_scalar_curvature(0.3)
    cc = conformal_constants(3)
    g = man.coordinate_grids()
    u = np.broadcast_to(np.sin(2 * np.pi * g[0]) + 0.2, man.shape)
    c = 1.7
    from prescurv.grid import divergence_form, laplacian_values

    R_new = conformal_scalar_curvature(man.constant_field(c)).values
    lhs = (
        -cc.a * c ** (-cc.p) * divergence_form(
            man.constant_field(c * c), man.interior_field(u)
        ).values
        + R_new * u
    )
    box_phi_u = (
        -cc.a * laplacian_values(man, c * u, "sbp") + man.coeff_R * c * u
    )
    defect_standard = np.abs(lhs - c ** (1 - cc.p) * box_phi_u).max()
    printed_alt = (man.dim - 2) / (man.dim + 2)
    defect_alt = np.abs(lhs - c**printed_alt * box_phi_u).max()
    assert defect_standard <= 1e-12
    assert defect_alt > 1e-2
