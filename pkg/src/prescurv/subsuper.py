"""Construction and verification of ordered solution sandwiches.

A sandwich is a pair 0 <= lower <= upper with lower not identically zero,
the lower field a weak subsolution and the upper field a supersolution of
the curvature equation.  Every constructor here re-checks its advertised
inequality by an independent evaluation pass and either returns a verified
field or raises; nothing unverified reaches the iteration engines.

On a cylinder the inequalities at boundary nodes are checked in the
summation-by-parts row sense (interior defect and Robin defect combined
with the trapezoid weight), which is the discrete form of "holds weakly"
and exactly the algebra the iteration solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import conformal_constants
from .errors import (
    GluingFailed,
    KindMismatch,
    NonPositiveInput,
    NonPositiveMultiplier,
    NoPositiveRegion,
    NotNontrivial,
    NoConvergence,
    SlackTooLarge,
    VerificationFailed,
)
from .grid import (
    GridManifold,
    ScalarField,
    boundary_restrict,
    gradient_sq,
    grad_pairing,
    integrate,
    laplacian_values,
    normal_derivative_values,
)
from .linalg import LinearProblem, solve_neumann_compatible, solve_shifted

VERIFY_TOL = 1e-9


@dataclass(frozen=True)
class LocalDomain:
    """Connected interior node mask on which the local Dirichlet problem lives."""

    mask: np.ndarray
    manifold: GridManifold

    def __post_init__(self):
        man = self.manifold
        if self.mask.shape != man.shape:
            raise KindMismatch("mask shape does not match the manifold")
        if not self.mask.any():
            raise NoPositiveRegion("empty local domain")
        if man.is_cylinder and (self.mask[0].any() or self.mask[-1].any()):
            raise NoPositiveRegion("local domain touches a boundary slice")
        if not _is_connected(self.mask, man):
            raise NoPositiveRegion("local domain is not connected")

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def eroded(self, layers: int = 1) -> "LocalDomain":
        m = self.mask
        for _ in range(layers):
            m = _erode(m, self.manifold)
        return LocalDomain(_largest_component(m, self.manifold), self.manifold)


@dataclass
class SubSuperPair:
    lower: ScalarField
    upper: ScalarField
    slack: float
    verified: bool
    worst_margin_lower: float
    worst_margin_upper: float


@dataclass
class GlueResult:
    upper: ScalarField
    lower: ScalarField
    omega: LocalDomain
    slack_used: float
    margin: float


# ---------------------------------------------------------------------------
# mask utilities (periodic-aware)


def _neighbors(idx, shape, cylinder):
    out = []
    for k in range(len(shape)):
        for d in (-1, 1):
            j = list(idx)
            j[k] += d
            if k == 0 and cylinder:
                if j[0] < 0 or j[0] >= shape[0]:
                    continue
            else:
                j[k] %= shape[k]
            out.append(tuple(j))
    return out


def _is_connected(mask, man) -> bool:
    return _largest_component(mask, man).sum() == mask.sum()


def _largest_component(mask, man) -> np.ndarray:
    remaining = mask.copy()
    best = np.zeros_like(mask)
    while remaining.any():
        seed = tuple(int(i) for i in np.argwhere(remaining)[0])
        comp = np.zeros_like(mask)
        stack = [seed]
        comp[seed] = True
        remaining[seed] = False
        while stack:
            cur = stack.pop()
            for nb in _neighbors(cur, mask.shape, man.is_cylinder):
                if remaining[nb]:
                    remaining[nb] = False
                    comp[nb] = True
                    stack.append(nb)
        if comp.sum() > best.sum():
            best = comp
    return best


def _erode(mask, man) -> np.ndarray:
    out = mask.copy()
    for k in range(mask.ndim):
        if k == 0 and man.is_cylinder:
            shifted_lo = np.zeros_like(mask)
            shifted_hi = np.zeros_like(mask)
            shifted_lo[:-1] = mask[1:]
            shifted_hi[1:] = mask[:-1]
            out &= shifted_lo & shifted_hi
        else:
            out &= np.roll(mask, 1, k) & np.roll(mask, -1, k)
    return out


def _rim_distance(mask, man) -> np.ndarray:
    """Grid-graph distance to the complement (0 outside the mask)."""
    dist = np.where(mask, -1, 0).astype(int)
    frontier = list(map(tuple, np.argwhere(~mask)))
    level = 0
    while frontier:
        level += 1
        nxt = []
        for idx in frontier:
            for nb in _neighbors(idx, mask.shape, man.is_cylinder):
                if dist[nb] == -1:
                    dist[nb] = level
                    nxt.append(nb)
        frontier = nxt
    return dist


def default_local_domain(S: ScalarField, erode_layers: int = 2) -> LocalDomain:
    """Largest connected component of {S > max(S)/2}, eroded, interior only."""
    man = S.manifold
    smax = S.max()
    if smax <= 0.0:
        raise NoPositiveRegion("prescribed function is nowhere positive")
    mask = S.values > 0.5 * smax
    if man.is_cylinder:
        mask[0] = False
        mask[-1] = False
    mask = _largest_component(mask, man)
    for _ in range(erode_layers):
        m = _erode(mask, man)
        if not m.any():
            break
        mask = m
    mask = _largest_component(mask, man)
    if not mask.any():
        raise NoPositiveRegion("positive region too thin for an interior domain")
    return LocalDomain(mask, man)


def ball_domain(man: GridManifold, center=None, radius_nodes: int = 3) -> LocalDomain:
    """Axis-aligned discrete ball; the generic domain for constant targets."""
    if center is None:
        center = tuple(s // 2 for s in man.shape)
    grids = np.meshgrid(*[np.arange(s) for s in man.shape], indexing="ij")
    d2 = np.zeros(man.shape)
    for k, g in enumerate(grids):
        diff = np.abs(g - center[k])
        if not (k == 0 and man.is_cylinder):
            diff = np.minimum(diff, man.shape[k] - diff)
        d2 += diff.astype(float) ** 2
    mask = d2 <= radius_nodes**2
    if man.is_cylinder:
        mask[0] = False
        mask[-1] = False
    return LocalDomain(_largest_component(mask, man), man)


# ---------------------------------------------------------------------------
# weak row defects


def weak_defect(u: ScalarField, S: ScalarField, *, beta: float = 0.0,
                H: ScalarField | None = None) -> np.ndarray:
    """Row defects of  -a lap u + (R+beta) u - S u^(p-1)  (Robin rows on a
    cylinder fold the boundary condition in with the trapezoid weight).

    A supersolution has all rows >= 0, a subsolution all rows <= 0, up to
    verification tolerance.
    """
    man = u.manifold
    cc = conformal_constants(man.dim)
    vals = u.values
    if vals.min() < 0:
        raise NonPositiveInput("sandwich fields must be nonnegative")
    lap = laplacian_values(man, vals, "sbp")
    defect = -cc.a * lap + (man.coeff_R + beta) * vals - S.values * vals ** (cc.p - 1.0)
    if not man.is_cylinder:
        return defect
    h0 = man.spacing[0]
    dn = normal_derivative_values(man, vals)
    ub = np.stack([vals[0], vals[-1]])
    coeff = 2.0 / cc.p_minus_2
    robin = dn + coeff * man.coeff_h * ub
    if H is not None:
        robin = robin - coeff * H.values * ub ** (cc.p / 2.0)
    out = defect.copy()
    out[0] = (h0 / 2.0) * defect[0] + cc.a * robin[0]
    out[-1] = (h0 / 2.0) * defect[-1] + cc.a * robin[1]
    return out


def verify_pair(lower: ScalarField, upper: ScalarField, S: ScalarField, *,
                slack: float = 0.0, beta: float = 0.0,
                H: ScalarField | None = None,
                tol: float = VERIFY_TOL) -> SubSuperPair:
    """Re-check every sandwich inequality and freeze the margins."""
    if lower.sup_norm() == 0.0:
        raise NotNontrivial("lower solution is identically zero")
    if upper.min() <= 0.0:
        raise NonPositiveInput("upper solution must be strictly positive")
    order_gap = float((upper.values - lower.values).min())
    scale = 1.0 + upper.sup_norm()
    if order_gap < -tol * scale:
        node = np.unravel_index(
            int(np.argmin(upper.values - lower.values)), upper.values.shape
        )
        raise VerificationFailed(
            f"ordering lower <= upper violated by {-order_gap:.3e}",
            node=tuple(int(i) for i in node),
            margin=order_gap,
        )
    d_lo = weak_defect(lower, S, beta=beta, H=H)
    d_up = weak_defect(upper, S, beta=beta, H=H)
    margin_lower = float(d_lo.max())
    margin_upper = float(d_up.min())
    defect_scale = 1.0 + float(np.abs(d_up).max()) + S.sup_norm()
    if margin_lower > tol * defect_scale:
        node = np.unravel_index(int(np.argmax(d_lo)), d_lo.shape)
        raise VerificationFailed(
            f"lower field is not a weak subsolution (defect {margin_lower:.3e})",
            node=tuple(int(i) for i in node),
            margin=margin_lower,
        )
    if margin_upper < -tol * defect_scale:
        node = np.unravel_index(int(np.argmin(d_up)), d_up.shape)
        raise VerificationFailed(
            f"upper field is not a supersolution (defect {margin_upper:.3e})",
            node=tuple(int(i) for i in node),
            margin=margin_upper,
        )
    return SubSuperPair(
        lower=lower,
        upper=upper,
        slack=slack,
        verified=True,
        worst_margin_lower=margin_lower,
        worst_margin_upper=margin_upper,
    )


# ---------------------------------------------------------------------------
# upper solutions


def _substitution_constant(cc, v0_vals, grad_sq_max, absorber) -> float:
    """Deterministic additive constant making the substituted field positive
    and its gradient quotient dominated by the absorbed slack."""
    c = max(0.0, -2.0 * float(v0_vals.min()))
    c += cc.a * (cc.p - 1.0) / (cc.p_minus_2 * absorber) * grad_sq_max
    if c == 0.0:
        c = 1.0
    return c


def build_upper_closed(S: ScalarField, slack: float) -> ScalarField:
    """Supersolution of the slack-shifted equation on a torus or a
    zero-mean-curvature cylinder, via the substitution u = v^(1/(2-p)).

    Solves the linear problem  -a lap v0 = (2-p)(S+slack) - gamma  with
    gamma the matching mean, lifts v0 by a deterministic constant, and
    verifies the resulting field pointwise before returning it.
    """
    man = S.manifold
    cc = conformal_constants(man.dim)
    shifted = man.interior_field(S.values + slack)
    total = integrate(shifted)
    if not total < 0.0:
        raise SlackTooLarge(
            f"slack {slack} pushes the mean of the target to {total / man.volume:.3e} >= 0"
        )
    gamma = cc.two_minus_p * total / man.volume  # > 0
    rhs = man.interior_field(cc.two_minus_p * shifted.values - gamma)
    if man.is_cylinder:
        zero_flux = man.boundary_field(np.zeros(man.boundary_shape))
        v0 = solve_neumann_compatible(rhs, zero_flux, cc.a)
    else:
        v0 = solve_shifted(LinearProblem(shift_A=0.0, rhs=rhs, a_coeff=cc.a))
    gmax = gradient_sq(v0).max()
    c_lift = _substitution_constant(cc, v0.values, gmax, gamma)
    v = v0.values + c_lift
    if v.min() <= 0.0:
        raise VerificationFailed("substituted field failed to be positive")
    upper = man.interior_field(v ** (1.0 / cc.two_minus_p))
    defect = weak_defect(upper, shifted)
    margin = float(defect.min())
    scale = 1.0 + float(np.abs(defect).max())
    if margin < -VERIFY_TOL * scale:
        node = np.unravel_index(int(np.argmin(defect)), defect.shape)
        raise VerificationFailed(
            f"upper construction defect {margin:.3e}",
            node=tuple(int(i) for i in node),
            margin=margin,
        )
    return upper


def build_upper_boundary(S: ScalarField, H: ScalarField, slack: float,
                         slack_retained: float) -> tuple[ScalarField, float]:
    """Supersolution machinery for nonzero boundary data on a cylinder.

    Returns the substituted field (a supersolution of the equation with
    target S + slack_retained and boundary data c*H for every c below the
    returned coupling bound c_max; c_max is infinite when H <= 0).
    """
    man = S.manifold
    if not man.is_cylinder:
        raise KindMismatch("boundary construction needs a cylinder")
    if H.is_interior:
        raise KindMismatch("H must be a boundary field")
    cc = conformal_constants(man.dim)
    shifted_vals = S.values + slack + slack_retained
    total = integrate(man.interior_field(shifted_vals))
    if not total < 0.0:
        raise SlackTooLarge(
            f"slacks push the mean of the target to {total / man.volume:.3e} >= 0"
        )
    area = man.boundary_area
    flux_const = -cc.two_minus_p * total / (cc.a * area)  # < 0
    rhs = man.interior_field(cc.two_minus_p * shifted_vals)
    gb = man.boundary_field(np.full(man.boundary_shape, flux_const))
    phi = solve_neumann_compatible(rhs, gb, cc.a)
    absorber = cc.p_minus_2 * slack
    gmax = gradient_sq(phi).max()
    c_lift = _substitution_constant(cc, phi.values, gmax, absorber)
    phi_t = phi.values + c_lift
    if phi_t.min() <= 0.0:
        raise VerificationFailed("substituted field failed to be positive")
    upper = man.interior_field(phi_t ** (1.0 / cc.two_minus_p))

    # largest boundary coupling keeping  flux_const <= -2 c H sqrt(phi_t)
    hb = H.values
    pb = np.stack([phi_t[0], phi_t[-1]])
    tau = 1e-12 * (1.0 + float(np.abs(hb).max()))
    pos = hb > tau
    if pos.any():
        c_max = float(np.min(-flux_const / (2.0 * hb[pos] * np.sqrt(pb[pos]))))
    else:
        c_max = np.inf

    shifted = man.interior_field(S.values + slack_retained)
    defect = (
        -cc.a * laplacian_values(man, upper.values, "sbp")
        + man.coeff_R * upper.values
        - shifted.values * upper.values ** (cc.p - 1.0)
    )[1:-1]
    margin = float(defect.min())
    scale = 1.0 + float(np.abs(defect).max())
    if margin < -VERIFY_TOL * scale:
        raise VerificationFailed(
            f"interior defect {margin:.3e} in the boundary upper construction",
            margin=margin,
        )
    return upper, c_max


# ---------------------------------------------------------------------------
# local Dirichlet problem


def _dirichlet_matrix(man: GridManifold, omega: LocalDomain, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Dense operator of  -a lap + (R+beta)  on the masked nodes."""
    cc = conformal_constants(man.dim)
    nodes = [tuple(int(i) for i in idx) for idx in np.argwhere(omega.mask)]
    index = {idx: i for i, idx in enumerate(nodes)}
    m = len(nodes)
    mat = np.zeros((m, m))
    for idx, i in index.items():
        diag = 0.0
        for k in range(man.dim):
            h2 = man.spacing[k] ** 2
            diag += 2.0 * cc.a / h2
            for d in (-1, 1):
                j = list(idx)
                j[k] += d
                if k == 0 and man.manifold_is_cylinder if False else False:
                    pass
                if k == 0 and man.is_cylinder:
                    if j[0] < 0 or j[0] >= man.shape[0]:
                        continue
                else:
                    j[k] %= man.shape[k]
                jt = tuple(j)
                if jt in index:
                    mat[i, index[jt]] -= cc.a / h2
        mat[i, i] += diag + man.coeff_R[idx] + beta
    return mat, np.array(nodes)


def solve_local_dirichlet(S: ScalarField, omega: LocalDomain, beta: float = 0.0,
                          *, max_pgd: int = 300, newton_steps: int = 40,
                          tol: float = 1e-11) -> ScalarField:
    """Positive solution of the local Dirichlet problem on the masked domain.

    Minimizes the quadratic energy over the unit level set of the weighted
    p-th moment by projected gradient with backtracking, then polishes the
    stationarity system with Newton steps.  The recovered multiplier must be
    positive; it fixes the scaling of the returned zero-extended field.
    """
    man = S.manifold
    cc = conformal_constants(man.dim)
    if beta > 0:
        raise ValueError("the local perturbation must be <= 0")
    svals = S.values[omega.mask]
    if svals.min() <= 0.0:
        raise NonPositiveInput("target function must be positive on the local domain")
    mat, nodes = _dirichlet_matrix(man, omega, beta)
    wts = man.volume_weights[omega.mask]

    def moment(w):
        return float(np.sum(svals * np.maximum(w, 0.0) ** cc.p * wts))

    def energy(w):
        return float(w @ (mat @ w) * 0.5) * 2.0 / 2.0 + 0.0  # symmetric quadratic
    # (energy written out below; keep a single definition)

    def q_form(w):
        return float(w @ (mat @ w))

    # positive seed scaled onto the constraint
    w = np.ones(len(nodes))
    w /= moment(w) ** (1.0 / cc.p)

    def pg_residual(w):
        g = 2.0 * (mat @ w)
        gc = cc.p * svals * np.maximum(w, 0.0) ** (cc.p - 1.0) * wts
        coeff = float(g @ gc) / float(gc @ gc)
        return g - coeff * gc, gc

    q = q_form(w)
    step = 1.0
    for _ in range(max_pgd):
        gt, _ = pg_residual(w)
        gnorm = float(np.abs(gt / wts).max())
        if gnorm <= 1e-6 * (1.0 + abs(q)):
            break
        accepted = False
        s = step
        for _ in range(40):
            trial = w - s * gt
            mom = moment(trial)
            if mom > 0.0:
                trial = trial / mom ** (1.0 / cc.p)
                q_trial = q_form(trial)
                if q_trial <= q - 1e-4 * s * float(gt @ gt):
                    w, q = trial, q_trial
                    step = 1.5 * s
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            break

    # Newton polish of the stationarity system with the moment constraint
    mu = q_form(w)
    for _ in range(newton_steps):
        wpos = np.maximum(w, 0.0)
        f1 = mat @ w - mu * svals * wpos ** (cc.p - 1.0)
        f2 = moment(w) - 1.0
        res = max(float(np.abs(f1 / wts).max()), abs(f2))
        if res <= tol * (1.0 + abs(mu)):
            break
        m = len(w)
        jac = np.zeros((m + 1, m + 1))
        jac[:m, :m] = mat - np.diag(mu * svals * (cc.p - 1.0) * wpos ** (cc.p - 2.0))
        jac[:m, m] = -svals * wpos ** (cc.p - 1.0)
        jac[m, :m] = cc.p * svals * wpos ** (cc.p - 1.0) * wts
        rhs = -np.concatenate([f1, [f2]])
        try:
            delta = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"local Newton system singular: {exc}") from exc
        w = w + delta[:m]
        mu = mu + delta[m]
    else:
        raise NoConvergence("local Dirichlet polish did not converge", residual=res)

    if mu <= 0.0:
        raise NonPositiveMultiplier(
            "local quadratic form is not coercive on this domain; shrink it",
            multiplier=mu,
        )
    scale = mu ** (1.0 / cc.p_minus_2)
    full = np.zeros(man.shape)
    full[omega.mask] = scale * np.maximum(w, 0.0)
    return man.interior_field(full)


def build_lower(u0: ScalarField, omega: LocalDomain, beta: float = 0.0,
                S: ScalarField | None = None, tol: float = VERIFY_TOL) -> ScalarField:
    """Zero-extension of a local solution, verified as a weak subsolution.

    Interior nodes of the domain must satisfy the equation, rim nodes must
    show the subsolution-compatible flux jump, and everything else is 0 <= 0.
    """
    man = u0.manifold
    vals = u0.values
    if float(np.abs(vals).max()) == 0.0:
        raise NotNontrivial("local solution is identically zero")
    if np.abs(vals[~omega.mask]).max() > 0.0:
        raise VerificationFailed("field is not supported on the local domain")
    if S is None:
        raise KindMismatch("the target function is needed for the weak check")
    defect = weak_defect(u0, S, beta=beta)
    worst = float(defect.max())
    scale = 1.0 + float(np.abs(defect).max())
    if worst > tol * scale:
        node = np.unravel_index(int(np.argmax(defect)), defect.shape)
        raise VerificationFailed(
            f"zero-extension defect {worst:.3e}",
            node=tuple(int(i) for i in node),
            margin=worst,
        )
    return u0


# ---------------------------------------------------------------------------
# gluing


def _smoothstep5(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def cutoff_field(omega: LocalDomain, core_fraction: float = 0.6) -> np.ndarray:
    """Quintic cutoff: 1 on the inner core of the domain, 0 on the rim band."""
    dist = _rim_distance(omega.mask, omega.manifold)
    dmax = dist.max()
    denom = max(dmax - 1, 1)
    t = (dist - 1.0) / denom
    band = 1.0 - core_fraction
    return np.where(omega.mask, _smoothstep5(t / band), 0.0)


def glue(u_local: ScalarField, u_candidate: ScalarField, omega: LocalDomain,
         slack: float, S: ScalarField, *, beta: float = 0.0,
         H: ScalarField | None = None, headroom: float = 0.05,
         candidate_builder=None, local_solver=None,
         max_doublings: int = 8, max_shrinks: int = 4,
         tol: float = VERIFY_TOL) -> GlueResult:
    """Merge a local solution into a global supersolution candidate.

    The glued field equals the candidate outside the domain and dominates
    (1+headroom) times the local solution on the core.  Verification failure
    retries with doubled slack (rebuilding the candidate) and then with the
    domain shrunk one rim layer at a time (re-solving the local problem),
    raising GluingFailed with the best margin achieved when exhausted.
    """
    man = S.manifold
    best_margin = -np.inf
    cur_omega, cur_local = omega, u_local
    for shrink in range(max_shrinks + 1):
        cur_slack = slack
        candidate = u_candidate if shrink == 0 else None
        for attempt in range(max_doublings + 1):
            if candidate is None:
                if candidate_builder is None:
                    break
                try:
                    candidate = candidate_builder(cur_slack)
                except (SlackTooLarge, VerificationFailed):
                    break
            excess = np.maximum(0.0, (1.0 + headroom) * cur_local.values - candidate.values)
            chi = cutoff_field(cur_omega)
            glued = man.interior_field(candidate.values + chi * excess)
            defect = weak_defect(glued, S, beta=beta, H=H)
            margin = float(defect.min())
            order_gap = float((glued.values - cur_local.values).min())
            scale = 1.0 + float(np.abs(defect).max())
            ok = margin >= -tol * scale and order_gap >= -tol * (1.0 + glued.sup_norm())
            best_margin = max(best_margin, margin if order_gap >= 0 else -np.inf)
            if ok:
                return GlueResult(
                    upper=glued,
                    lower=cur_local,
                    omega=cur_omega,
                    slack_used=cur_slack,
                    margin=margin,
                )
            cur_slack *= 2.0
            candidate = None
        if shrink == max_shrinks or local_solver is None:
            break
        try:
            cur_omega = cur_omega.eroded(1)
            cur_local = local_solver(cur_omega)
        except (NoPositiveRegion, NonPositiveMultiplier, NoConvergence):
            break
    raise GluingFailed(
        f"gluing retries exhausted (best margin {best_margin:.3e})",
        best_margin=best_margin,
    )
