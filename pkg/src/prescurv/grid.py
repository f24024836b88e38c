"""Discrete model manifolds and their calculus.

A :class:`GridManifold` is a flat vertex-centered tensor grid, either fully
periodic (torus) or bounded along the first axis with two boundary slices
(cylinder); all remaining axes are periodic.  Background curvature enters
solely through coefficient fields attached to the manifold, so the grid
metric itself is always flat.

The calculus operators are built so that the discrete Green identity

    sum_cells  grad(u) . grad(w)  =  sum_nodes (-lap u) w vol
                                      + sum_bnodes (du/dnu) w area

holds exactly (to rounding) for every pair of fields and both topologies.
This summation-by-parts structure is what makes the integral identities
checked elsewhere in the library exact at the discrete level instead of
merely O(h^2).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import InvalidShape, KindMismatch, NoBoundary, DimensionMismatch

MAX_DIM = 5


class Topology(enum.Enum):
    TORUS = "torus"
    CYLINDER = "cylinder"


class FieldKind(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"


def _readonly(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GridManifold:
    """Vertex-centered flat grid with quadrature weights and coefficient fields.

    ``coeff_R`` is the background scalar curvature (interior field),
    ``coeff_h`` the background mean curvature (boundary field, cylinder only).
    In dimension 2 the analogous Gauss / geodesic curvature backgrounds are
    ``coeff_K`` and ``coeff_sigma``.  Defaults are identically zero: the flat
    model whose conformal Laplacian has first eigenvalue exactly zero.
    """

    dim: int
    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    topology: Topology
    coeff_R: np.ndarray
    coeff_h: np.ndarray | None
    coeff_K: np.ndarray | None
    coeff_sigma: np.ndarray | None

    # -- geometry -----------------------------------------------------------

    @property
    def is_cylinder(self) -> bool:
        return self.topology is Topology.CYLINDER

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        hs = []
        for k, (n, length) in enumerate(zip(self.shape, self.lengths)):
            if k == 0 and self.is_cylinder:
                hs.append(length / (n - 1))
            else:
                hs.append(length / n)
        return tuple(hs)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def boundary_shape(self) -> tuple[int, ...]:
        if not self.is_cylinder:
            raise NoBoundary("torus has no boundary slice")
        return (2, *self.shape[1:])

    @cached_property
    def axis_weights(self) -> tuple[np.ndarray, ...]:
        """Per-axis 1D quadrature weights (trapezoid on the bounded axis)."""
        out = []
        for k, n in enumerate(self.shape):
            h = self.spacing[k]
            w = np.full(n, h)
            if k == 0 and self.is_cylinder:
                w[0] = h / 2.0
                w[-1] = h / 2.0
            out.append(_readonly(w))
        return tuple(out)

    @cached_property
    def volume_weights(self) -> np.ndarray:
        w = np.ones(self.shape)
        for k, wk in enumerate(self.axis_weights):
            sl = [None] * self.dim
            sl[k] = slice(None)
            w = w * wk[tuple(sl)]
        return _readonly(w)

    @property
    def boundary_weight(self) -> float:
        """Quadrature weight of a single boundary node (transverse spacings)."""
        if not self.is_cylinder:
            raise NoBoundary("torus has no boundary nodes")
        return float(np.prod(self.spacing[1:]))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def boundary_area(self) -> float:
        if not self.is_cylinder:
            raise NoBoundary("torus has no boundary")
        return 2.0 * float(np.prod(self.lengths[1:]))

    def coords(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def coordinate_grids(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for k in range(self.dim):
            sl = [None] * self.dim
            sl[k] = slice(None)
            out.append(self.coords(k)[tuple(sl)])
        return out

    @property
    def geometry_key(self):
        return (self.dim, self.shape, self.lengths, self.topology)

    def same_geometry(self, other: "GridManifold") -> bool:
        return self.geometry_key == other.geometry_key

    # -- coefficient updates -------------------------------------------------

    def with_scalar_curvature(self, values) -> "GridManifold":
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.shape)
        return replace(self, coeff_R=_readonly(arr))

    def with_mean_curvature(self, values) -> "GridManifold":
        if not self.is_cylinder:
            raise NoBoundary("mean curvature lives on the boundary slices")
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.boundary_shape)
        return replace(self, coeff_h=_readonly(arr))

    def with_gauss_curvature(self, values) -> "GridManifold":
        if self.dim != 2:
            raise DimensionMismatch("Gauss curvature background needs dim 2")
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.shape)
        return replace(self, coeff_K=_readonly(arr))

    def with_geodesic_curvature(self, values) -> "GridManifold":
        if self.dim != 2 or not self.is_cylinder:
            raise DimensionMismatch("geodesic curvature background needs a 2D cylinder")
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.boundary_shape)
        return replace(self, coeff_sigma=_readonly(arr))

    # -- field constructors ---------------------------------------------------

    def interior_field(self, values) -> "ScalarField":
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.shape)
        return ScalarField(self, _readonly(arr), FieldKind.INTERIOR)

    def boundary_field(self, values) -> "ScalarField":
        arr = np.broadcast_to(np.asarray(values, dtype=float), self.boundary_shape)
        return ScalarField(self, _readonly(arr), FieldKind.BOUNDARY)

    def constant_field(self, c: float) -> "ScalarField":
        return self.interior_field(np.full(self.shape, float(c)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node-indexed real values on a manifold, interior or boundary slice."""

    manifold: GridManifold
    values: np.ndarray
    kind: FieldKind

    def __post_init__(self):
        expected = (
            self.manifold.shape
            if self.kind is FieldKind.INTERIOR
            else self.manifold.boundary_shape
        )
        if self.values.shape != expected:
            raise KindMismatch(
                f"field values shaped {self.values.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def is_interior(self) -> bool:
        return self.kind is FieldKind.INTERIOR

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def with_values(self, values) -> "ScalarField":
        arr = np.asarray(values, dtype=float).reshape(self.values.shape)
        return ScalarField(self.manifold, _readonly(arr), self.kind)


# ---------------------------------------------------------------------------
# construction


def _validate(n, shape, lengths):
    if not (2 <= n <= MAX_DIM):
        raise InvalidShape(f"dimension must be in [2, {MAX_DIM}], got {n}")
    shape = tuple(int(s) for s in shape)
    lengths = tuple(float(x) for x in lengths)
    if len(shape) != n or len(lengths) != n:
        raise InvalidShape("shape/lengths must have one entry per axis")
    if any(s < 4 for s in shape):
        raise InvalidShape(f"every axis needs at least 4 nodes, got {shape}")
    if any(x <= 0 for x in lengths):
        raise InvalidShape(f"axis lengths must be positive, got {lengths}")
    return shape, lengths


def build_torus(n: int, shape, lengths) -> GridManifold:
    """Fully periodic flat grid; the closed scalar-flat model manifold."""
    shape, lengths = _validate(n, shape, lengths)
    man = GridManifold(
        dim=n,
        shape=shape,
        lengths=lengths,
        topology=Topology.TORUS,
        coeff_R=_readonly(np.zeros(shape)),
        coeff_h=None,
        coeff_K=_readonly(np.zeros(shape)) if n == 2 else None,
        coeff_sigma=None,
    )
    return man


def build_cylinder(n: int, shape, lengths) -> GridManifold:
    """Grid bounded along axis 0 (two boundary slices), periodic elsewhere."""
    shape, lengths = _validate(n, shape, lengths)
    bshape = (2, *shape[1:])
    man = GridManifold(
        dim=n,
        shape=shape,
        lengths=lengths,
        topology=Topology.CYLINDER,
        coeff_R=_readonly(np.zeros(shape)),
        coeff_h=_readonly(np.zeros(bshape)),
        coeff_K=_readonly(np.zeros(shape)) if n == 2 else None,
        coeff_sigma=_readonly(np.zeros(bshape)) if n == 2 else None,
    )
    return man


# ---------------------------------------------------------------------------
# quadrature


def integrate(f: ScalarField) -> float:
    """Weighted node sum; exact for fields constant along each axis."""
    if not f.is_interior:
        raise KindMismatch("integrate expects an interior field")
    return float(np.sum(f.values * f.manifold.volume_weights))


def integrate_boundary(f: ScalarField) -> float:
    if f.is_interior:
        raise KindMismatch("integrate_boundary expects a boundary field")
    return float(np.sum(f.values) * f.manifold.boundary_weight)


def boundary_restrict(u: ScalarField) -> ScalarField:
    """Restriction of an interior field to the two boundary slices."""
    if not u.is_interior:
        raise KindMismatch("boundary_restrict expects an interior field")
    man = u.manifold
    if not man.is_cylinder:
        raise NoBoundary("torus has no boundary")
    vals = np.stack([u.values[0], u.values[-1]])
    return man.boundary_field(vals)


# ---------------------------------------------------------------------------
# difference operators (arrays in, arrays out; ScalarField wrappers below)


def _lap_axis_periodic(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(v, -1, axis) - 2.0 * v + np.roll(v, 1, axis)) / (h * h)


def _lap_axis_bounded(v: np.ndarray, h: float, closure: str) -> np.ndarray:
    """Second difference along axis 0 with a boundary closure.

    ``closure='sbp'`` uses the flux closure consistent with the one-sided
    normal derivative, which at the end nodes collapses to the inward-shifted
    second difference.  ``closure='neumann'`` is the zero-flux variational
    closure (the gradient of the Dirichlet energy divided by the trapezoid
    weights).
    """
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    if closure == "sbp":
        out[0] = (v[0] - 2.0 * v[1] + v[2]) / (h * h)
        out[-1] = (v[-1] - 2.0 * v[-2] + v[-3]) / (h * h)
    elif closure == "neumann":
        out[0] = 2.0 * (v[1] - v[0]) / (h * h)
        out[-1] = 2.0 * (v[-2] - v[-1]) / (h * h)
    else:  # pragma: no cover
        raise ValueError(closure)
    return out


def laplacian_values(man: GridManifold, v: np.ndarray, closure: str = "sbp") -> np.ndarray:
    out = np.zeros_like(v)
    for k in range(man.dim):
        h = man.spacing[k]
        if k == 0 and man.is_cylinder:
            out += _lap_axis_bounded(v, h, closure)
        else:
            out += _lap_axis_periodic(v, k, h)
    return out


def laplacian(u: ScalarField) -> ScalarField:
    """Discrete Laplace operator (this output is negative semi-definite;
    its negation is the positive-definite operator used in the solvers)."""
    if not u.is_interior:
        raise KindMismatch("laplacian expects an interior field")
    return u.manifold.interior_field(laplacian_values(u.manifold, u.values, "sbp"))


def laplacian_neumann(u: ScalarField) -> ScalarField:
    """Laplacian with the zero-flux (natural Neumann) variational closure."""
    if not u.is_interior:
        raise KindMismatch("laplacian_neumann expects an interior field")
    return u.manifold.interior_field(laplacian_values(u.manifold, u.values, "neumann"))


def normal_derivative_values(man: GridManifold, v: np.ndarray) -> np.ndarray:
    if not man.is_cylinder:
        raise NoBoundary("normal derivative needs a bounded axis")
    h = man.spacing[0]
    lo = (3.0 * v[0] - 4.0 * v[1] + v[2]) / (2.0 * h)
    hi = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.stack([lo, hi])


def normal_derivative(u: ScalarField) -> ScalarField:
    """Outward one-sided second-order derivative on the two boundary slices."""
    if not u.is_interior:
        raise KindMismatch("normal_derivative expects an interior field")
    return u.manifold.boundary_field(normal_derivative_values(u.manifold, u.values))


def _transverse_weights(man: GridManifold, axis: int) -> np.ndarray:
    """Product of quadrature weights over all axes except ``axis``."""
    w = np.ones(man.shape)
    for k, wk in enumerate(man.axis_weights):
        if k == axis:
            continue
        sl = [None] * man.dim
        sl[k] = slice(None)
        w = w * wk[tuple(sl)]
    return w


def grad_pairing(u: ScalarField, w: ScalarField) -> float:
    """Exact discrete pairing  sum grad(u).grad(w) dVol  over grid cells.

    This is the bilinear form whose adjoint is ``laplacian``; the Green
    identity ties the three operators together exactly.
    """
    if not (u.is_interior and w.is_interior):
        raise KindMismatch("grad_pairing expects interior fields")
    man = u.manifold
    total = 0.0
    for k in range(man.dim):
        h = man.spacing[k]
        tw = _transverse_weights(man, k)
        if k == 0 and man.is_cylinder:
            du = np.diff(u.values, axis=0) / h
            dw = np.diff(w.values, axis=0) / h
            cellw = h * tw[:-1]
            total += float(np.sum(du * dw * cellw))
        else:
            du = (np.roll(u.values, -1, k) - u.values) / h
            dw = (np.roll(w.values, -1, k) - w.values) / h
            total += float(np.sum(du * dw * h * tw))
    return total


def gradient_sq(u: ScalarField) -> ScalarField:
    """Per-node squared gradient assembled from the same forward differences.

    The node assignment averages the two adjacent cell values along each
    axis (single cell at a bounded end), which makes the weighted node sum
    reproduce ``grad_pairing(u, u)`` exactly.
    """
    if not u.is_interior:
        raise KindMismatch("gradient_sq expects an interior field")
    man = u.manifold
    out = np.zeros(man.shape)
    for k in range(man.dim):
        h = man.spacing[k]
        if k == 0 and man.is_cylinder:
            d2 = (np.diff(u.values, axis=0) / h) ** 2
            contrib = np.zeros(man.shape)
            contrib[0] = d2[0]
            contrib[-1] = d2[-1]
            contrib[1:-1] = 0.5 * (d2[:-1] + d2[1:])
            out += contrib
        else:
            d = (np.roll(u.values, -1, k) - u.values) / h
            out += 0.5 * (d * d + np.roll(d * d, 1, k))
    return man.interior_field(out)


def divergence_form(c: ScalarField, u: ScalarField) -> ScalarField:
    """Variable-coefficient operator  div(c grad u)  in divergence form.

    Cell coefficients are arithmetic means of the node values of ``c``;
    bounded ends use the natural zero-flux closure.  Used by the conformal
    covariance diagnostic, where ``c`` encodes a conformal volume factor.
    """
    if not (c.is_interior and u.is_interior):
        raise KindMismatch("divergence_form expects interior fields")
    man = u.manifold
    out = np.zeros(man.shape)
    for k in range(man.dim):
        h = man.spacing[k]
        if k == 0 and man.is_cylinder:
            du = np.diff(u.values, axis=0) / h
            cc = 0.5 * (c.values[:-1] + c.values[1:])
            flux = cc * du
            out[1:-1] += np.diff(flux, axis=0) / h
            out[0] += flux[0] / (h / 2.0)
            out[-1] += -flux[-1] / (h / 2.0)
        else:
            du = (np.roll(u.values, -1, k) - u.values) / h
            cc = 0.5 * (c.values + np.roll(c.values, -1, k))
            flux = cc * du
            out += (flux - np.roll(flux, 1, k)) / h
    return man.interior_field(out)


# ---------------------------------------------------------------------------
# CSV field dumps (row-major node order)


def dump_field(f: ScalarField, path) -> None:
    man = f.manifold
    shape_s = ",".join(str(s) for s in man.shape)
    spacing_s = ",".join(repr(h) for h in man.spacing)
    lines = [f"# dims={man.dim} shape={shape_s} spacing={spacing_s} kind={f.kind.value}"]
    if f.is_interior:
        idx_iter = np.ndindex(*man.shape)
        flat = f.values.reshape(-1)
        for row, idx in enumerate(idx_iter):
            lines.append(",".join(map(str, idx)) + f",{float(flat[row])!r}")
    else:
        n0 = man.shape[0]
        for side, i0 in enumerate((0, n0 - 1)):
            for idx in np.ndindex(*man.shape[1:]):
                val = float(f.values[(side, *idx)])
                lines.append(",".join(map(str, (i0, *idx))) + f",{val!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path, man: GridManifold, kind: FieldKind = FieldKind.INTERIOR) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing header line")
        rows = [line.strip() for line in fh if line.strip()]
    meta = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
    got_shape = tuple(int(s) for s in meta["shape"].split(","))
    if got_shape != man.shape:
        raise ValueError(f"{path}: shape {got_shape} does not match manifold {man.shape}")
    if kind is FieldKind.INTERIOR:
        vals = np.empty(man.shape)
        for row in rows:
            parts = row.split(",")
            idx = tuple(int(x) for x in parts[: man.dim])
            vals[idx] = float(parts[man.dim])
        return man.interior_field(vals)
    vals = np.empty(man.boundary_shape)
    n0 = man.shape[0]
    for row in rows:
        parts = row.split(",")
        idx = tuple(int(x) for x in parts[: man.dim])
        side = 0 if idx[0] == 0 else 1
        if idx[0] not in (0, n0 - 1):
            raise ValueError(f"{path}: node {idx} is not a boundary node")
        vals[(side, *idx[1:])] = float(parts[man.dim])
    return man.boundary_field(vals)
