"""Discrete multi-valued variational inequality solver.

A problem couples the double-phase operator with a constraint set (whole
working subspace, lower obstacle, or box), an optional interval reaction in
the domain and an optional one on the natural boundary part.  Multi-valued
terms are handled by an outer freeze-selection loop: the selection rule is
applied at the current iterate, an inner semismooth Newton / primal
active-set iteration solves the resulting single-valued VI, and the loop
stops when the frozen selection is consistent with the converged iterate.

Feasibility of the returned iterate is exact (active nodes are set onto
their bound, inactive updates are projected), and convergence is measured
by the nodal complementarity residual

    u_i - median(lo_i, u_i - r_i, hi_i),

which vanishes exactly when the discrete variational inequality holds for
every feasible direction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FeFunction, Mesh, fe_interpolate
from .multifun import (
    TruncationData,
    assemble_source,
    penalty,
    penalty_slope,
    pick_endpoint,
    truncate_multifunction,
)
from .operator import DoublePhaseOperator
from .spaces import ExponentData, ModularKind, luxemburg_norm

__all__ = [
    "ConstraintSet",
    "VIProblem",
    "AuxiliaryTerms",
    "SolverOptions",
    "SolveReport",
    "SolverError",
    "solve_vi",
    "vi_residual",
    "build_auxiliary",
    "check_coercivity",
]


class SolverError(RuntimeError):
    """Unrecoverable solver failure (singular systems after retries, ...)."""


class ConstraintSet:
    """Feasible set: the whole working subspace, a lower obstacle, or a box.

    Obstacle admissibility requires the obstacle to be nonpositive at
    essential-boundary nodes, so that the set is nonempty within the
    subspace of functions vanishing there.
    """

    def __init__(self, kind, psi=None, psi_upper=None):
        if kind not in ("whole_space", "obstacle", "box"):
            raise ValueError(f"unknown constraint kind {kind!r}")
        self.kind = kind
        self.psi = psi
        self.psi_upper = psi_upper
        if kind == "obstacle" and psi is None:
            raise ValueError("obstacle constraint needs an obstacle function")
        if kind == "box":
            if psi is None or psi_upper is None:
                raise ValueError("box constraint needs both bounds")
            if np.any(psi.coeffs > psi_upper.coeffs):
                raise ValueError("box bounds out of order")

    @classmethod
    def whole_space(cls):
        return cls("whole_space")

    @classmethod
    def obstacle(cls, psi: FeFunction):
        return cls("obstacle", psi=psi)

    @classmethod
    def box(cls, psi_lower: FeFunction, psi_upper: FeFunction):
        return cls("box", psi=psi_lower, psi_upper=psi_upper)

    def bounds(self, mesh: Mesh):
        """Nodal bounds as arrays, with +-inf where unconstrained."""
        lo = np.full(mesh.n_nodes, -np.inf)
        hi = np.full(mesh.n_nodes, np.inf)
        if self.kind in ("obstacle", "box"):
            lo = self.psi.coeffs.copy()
        if self.kind == "box":
            hi = self.psi_upper.coeffs.copy()
        return lo, hi

    def check_admissible(self, mesh: Mesh):
        if self.kind in ("obstacle", "box"):
            on_gamma0 = mesh.gamma0_node_mask
            if np.any(self.psi.coeffs[on_gamma0] > 0):
                raise ValueError(
                    "obstacle is positive at an essential-boundary node; "
                    "the constraint set is empty in the working subspace"
                )

    def project(self, coeffs, mesh: Mesh):
        """Clip nodal values into the bounds and zero the essential boundary."""
        lo, hi = self.bounds(mesh)
        out = np.clip(coeffs, lo, hi)
        out[mesh.gamma0_node_mask] = 0.0
        return out


@dataclass
class AuxiliaryTerms:
    """State-dependent penalty attached to an auxiliary problem.

    With a single lower/upper bound pair the compensator corrections vanish
    identically, so only the penalty contributes; q is the penalty growth
    exponent field sampled at interior quadrature points.
    """

    truncation: TruncationData
    q_field: np.ndarray

    def residual_field(self, u_vals):
        return penalty(self.truncation, self.q_field, u_vals)

    def slope_field(self, u_vals):
        return penalty_slope(self.truncation, self.q_field, u_vals)


@dataclass
class VIProblem:
    """Operator + constraint set + optional interior/boundary reactions."""

    operator: DoublePhaseOperator
    constraint: ConstraintSet
    f: object = None  # interval multifunction (interior)
    f_gamma: object = None  # interval multifunction (natural boundary)
    aux: Optional[AuxiliaryTerms] = None

    def __post_init__(self):
        self.constraint.check_admissible(self.mesh)
        if self.f_gamma is not None and self.mesh.boundary("gamma") is None:
            raise ValueError("boundary multifunction given but no gamma facets exist")

    @property
    def mesh(self) -> Mesh:
        return self.operator.mesh

    @property
    def exponents(self) -> ExponentData:
        return self.operator.exponents

    def with_terms(self, f=None, f_gamma=None, aux=None):
        return replace(self, f=f, f_gamma=f_gamma, aux=aux)


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 200
    max_outer: int = 50
    selection: str = "midpoint"
    seed: int = 0
    eps: float = 1e-8
    line_search_min: float = 1e-8
    initial: Optional[FeFunction] = None


@dataclass
class SolveReport:
    converged: bool = False
    outer_iterations: int = 0
    newton_iterations: int = 0
    residual: float = np.inf
    residual_history: list = field(default_factory=list)
    active_set_history: list = field(default_factory=list)
    inner_spans: list = field(default_factory=list)
    selection_rule: str = "midpoint"
    enclosure_status: Optional[dict] = None
    wall_time: float = 0.0
    message: str = ""


# ---------------------------------------------------------------------------
# residual machinery


def _weighted_mass(mesh: Mesh, weights):
    """Sparse matrix of integral(w * hat_i * hat_j) for a quadrature weight field."""
    basis = mesh.basis  # (nq, nloc)
    wq = mesh.quad_weights * weights  # (ne, nq)
    elem = np.einsum("eq,qi,qj->eij", wq, basis, basis)
    nloc = basis.shape[1]
    rows = np.repeat(mesh.elements, nloc, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nloc)).ravel()
    return sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def _residual_vector(prob: VIProblem, u: FeFunction, eta, zeta):
    """Full nodal dual vector of the problem at u with frozen selections."""
    r = prob.operator.apply(u)
    mesh = prob.mesh
    if eta is not None:
        r = r + assemble_source(eta, mesh, "interior")
    if zeta is not None:
        r = r + assemble_source(zeta, mesh, "boundary_gamma")
    if prob.aux is not None:
        r = r + assemble_source(prob.aux.residual_field(u.values_at_quad()), mesh, "interior")
    return r


def _complementarity(prob: VIProblem, u_coeffs, r):
    """Nodal complementarity residual over free nodes (projected form)."""
    mesh = prob.mesh
    lo, hi = prob.constraint.bounds(mesh)
    alpha = u_coeffs - np.minimum(np.maximum(lo, u_coeffs - r), hi)
    return alpha[mesh.free_node_mask]


def vi_residual(prob: VIProblem, u: FeFunction, eta=None, zeta=None) -> float:
    """Max-norm complementarity residual of the VI at (u, eta, zeta).

    Zero exactly when u solves the discrete variational inequality with the
    given selections: for the whole space this is the max dual-vector entry,
    for obstacle/box sets the projected residual
    ``u_i - median(lo_i, u_i - r_i, hi_i)`` over free nodes.
    """
    mesh = prob.mesh
    lo, hi = prob.constraint.bounds(mesh)
    feas_tol = 1e-12
    if np.any(u.coeffs < lo - feas_tol) or np.any(u.coeffs > hi + feas_tol):
        raise ValueError("iterate is infeasible for the constraint set")
    if np.any(np.abs(u.coeffs[mesh.gamma0_node_mask]) > feas_tol):
        raise ValueError("iterate does not vanish on the essential boundary")
    r = _residual_vector(prob, u, eta, zeta)
    return float(np.max(np.abs(_complementarity(prob, u.coeffs, r)), initial=0.0))


def _select_terms(prob: VIProblem, u: FeFunction, rule):
    eta = prob.f.select(u, rule) if prob.f is not None else None
    zeta = prob.f_gamma.select(u, rule) if prob.f_gamma is not None else None
    return eta, zeta


def _boundary_weighted_mass(mesh: Mesh, weights):
    """Sparse matrix of the gamma-boundary integral(w * hat_i * hat_j)."""
    bd = mesh.boundary("gamma")
    if bd is None:
        return sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    basis = bd["basis"]  # (nbq, nloc)
    wq = bd["quad_weights"] * weights
    elem = np.einsum("fq,qi,qj->fij", wq, basis, basis)
    nloc = basis.shape[1]
    rows = np.repeat(bd["facets"], nloc, axis=1).ravel()
    cols = np.tile(bd["facets"], (1, nloc)).ravel()
    return sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def _selection_slope(mf, u: FeFunction, rule, boundary=False, clip=1e10):
    """Finite-difference slope of the rule-selected endpoint with respect to s."""
    mesh = u.mesh
    if boundary:
        bd = mesh.boundary("gamma")
        points, s = bd["quad_points"], u.boundary_values("gamma")
    else:
        points, s = mesh.quad_points, u.values_at_quad()
    ds = 1e-6 * (1.0 + np.abs(s))
    lo_p, hi_p = mf.eval_interval(points, s + ds)
    lo_m, hi_m = mf.eval_interval(points, s - ds)
    slope = (pick_endpoint(rule, lo_p, hi_p) - pick_endpoint(rule, lo_m, hi_m)) / (2.0 * ds)
    return np.clip(slope, -clip, clip)


# ---------------------------------------------------------------------------
# inner semismooth Newton / active set


def _inner_solve(prob: VIProblem, u0: np.ndarray, opts: SolverOptions, report,
                 frozen=None, nonneg_slopes=False):
    """Semismooth Newton / primal active-set iteration for the selected VI.

    The rule-selected reaction endpoints are evaluated at the running
    iterate (with their slopes entering the Newton matrix); ``frozen``
    optionally supplies fixed selection fields instead (used by the warm
    start).  Returns (coefficients, converged flag).
    """
    mesh = prob.mesh
    free = np.flatnonzero(mesh.free_node_mask)
    lo, hi = prob.constraint.bounds(mesh)
    u = prob.constraint.project(u0.copy(), mesh)
    op = prob.operator
    eps = opts.eps
    rule = opts.selection

    def terms(uf):
        if frozen is not None:
            return frozen
        return _select_terms(prob, uf, rule)

    def merit(coeffs):
        uf = FeFunction(mesh, coeffs)
        eta, zeta = terms(uf)
        r = _residual_vector(prob, uf, eta, zeta)
        return r, float(np.max(np.abs(_complementarity(prob, coeffs, r)), initial=0.0))

    r, phi = merit(u)
    stall = 0
    span_start = len(report.residual_history)
    report.inner_spans.append([span_start, span_start])
    for it in range(opts.max_iter):
        report.inner_spans[-1][1] = len(report.residual_history) + 1
        report.residual_history.append(phi)
        if phi <= opts.tol:
            return u, True
        uf = FeFunction(mesh, u)
        for attempt in range(3):
            J = op.jacobian(uf, eps=eps * (100.0**attempt))
            if prob.aux is not None:
                J = J + _weighted_mass(mesh, prob.aux.slope_field(uf.values_at_quad()))
            if frozen is None and prob.f is not None:
                sl = _selection_slope(prob.f, uf, rule)
                if nonneg_slopes:
                    sl = np.maximum(sl, 0.0)
                J = J + _weighted_mass(mesh, sl)
            if frozen is None and prob.f_gamma is not None:
                sl = _selection_slope(prob.f_gamma, uf, rule, boundary=True)
                if nonneg_slopes:
                    sl = np.maximum(sl, 0.0)
                J = J + _boundary_weighted_mass(mesh, sl)
            rf = r[free]
            uf_free = u[free]
            lo_f, hi_f = lo[free], hi[free]
            # active where the bound wins the pointwise min/max in the NCP
            act_lo = np.isfinite(lo_f) & (uf_free - lo_f <= rf)
            act_hi = np.isfinite(hi_f) & (hi_f - uf_free <= -rf) & ~act_lo
            inact = ~(act_lo | act_hi)
            delta = np.zeros(len(free))
            delta[act_lo] = lo_f[act_lo] - uf_free[act_lo]
            delta[act_hi] = hi_f[act_hi] - uf_free[act_hi]
            Jff = J[np.ix_(free, free)].tocsc()
            idx_i = np.flatnonzero(inact)
            try:
                if len(idx_i):
                    rhs = -rf[idx_i] - Jff[np.ix_(idx_i, np.flatnonzero(~inact))] @ delta[~inact]
                    sol = spla.spsolve(Jff[np.ix_(idx_i, idx_i)], rhs)
                    if not np.all(np.isfinite(sol)):
                        raise RuntimeError("singular Newton system")
                    delta[idx_i] = sol
                break
            except RuntimeError:
                if attempt == 2:
                    raise SolverError(
                        "Newton system singular after smoothing retries"
                    ) from None
        report.active_set_history.append(int(np.count_nonzero(act_lo | act_hi)))

        step = np.zeros(mesh.n_nodes)
        step[free] = delta
        t = 1.0
        accepted = False
        while t >= opts.line_search_min:
            trial = prob.constraint.project(u + t * step, mesh)
            r_t, phi_t = merit(trial)
            if phi_t < phi * (1.0 - 1e-4 * t) or phi_t <= opts.tol:
                u, r, phi = trial, r_t, phi_t
                accepted = True
                break
            t *= 0.5
        report.newton_iterations += 1
        if not accepted:
            stall += 1
            trial = prob.constraint.project(u + opts.line_search_min * step, mesh)
            r_t, phi_t = merit(trial)
            if phi_t < phi:
                u, r, phi = trial, r_t, phi_t
            if stall >= 3:
                return u, phi <= opts.tol
        else:
            stall = 0
    report.residual_history.append(phi)
    return u, phi <= opts.tol


def _warm_start(prob: VIProblem, opts) -> np.ndarray:
    """Initial iterate from the quadratic-energy variant of the problem.

    The reaction selections are frozen at the flat iterate and the exponents
    forced to 2, giving a robustly solvable linear complementarity problem
    whose solution is a well-scaled feasible start.
    """
    mesh = prob.mesh
    ed = prob.exponents
    flat = prob.constraint.project(np.zeros(mesh.n_nodes), mesh)
    if abs(ed.p_minus - 2) < 1e-12 and abs(ed.p_plus - 2) < 1e-12 and ed.mu.max() == 0.0:
        return flat
    frozen = _select_terms(prob, FeFunction(mesh, flat), opts.selection)
    shape = mesh.quad_weights.shape
    ed2 = ExponentData(mesh, np.full(shape, 2.0), np.full(shape, 3.0), np.zeros(shape))
    op2 = DoublePhaseOperator(mesh, ed2, eps=opts.eps)
    prob2 = VIProblem(op2, prob.constraint, prob.f, prob.f_gamma, aux=prob.aux)
    rep = SolveReport()
    sub = SolverOptions(tol=max(opts.tol, 1e-10), max_iter=60, eps=opts.eps,
                        selection=opts.selection)
    try:
        u, _ = _inner_solve(prob2, flat, sub, rep, frozen=frozen)
        return u
    except SolverError:
        return flat


def solve_vi(prob: VIProblem, opts: Optional[SolverOptions] = None):
    """Solve the multi-valued VI; returns (u, eta, zeta, report).

    The returned iterate is feasible to machine precision, the selections
    satisfy eta(x) in f(x, u(x)) pointwise (by construction of the selection
    rule), and the complementarity residual is at most ``opts.tol`` when
    ``report.converged`` is set.  On iteration exhaustion the best iterate
    is returned flagged non-converged.  If the Newton system is singular the
    smoothing is enlarged twice before a :class:`SolverError` is raised.
    """
    opts = opts or SolverOptions()
    report = SolveReport(selection_rule=opts.selection)
    start = time.perf_counter()
    mesh = prob.mesh

    if opts.initial is not None:
        u = prob.constraint.project(opts.initial.coeffs.copy(), mesh)
    else:
        u = _warm_start(prob, opts)

    eta = zeta = None
    sel_gap = np.inf
    for outer in range(1, opts.max_outer + 1):
        report.outer_iterations = outer
        eta, zeta = _select_terms(prob, FeFunction(mesh, u), opts.selection)
        u, ok = _inner_solve(prob, u, opts, report)
        if not ok:
            # retry the round with slopes clipped nonnegative: keeps the
            # Newton matrix positive semidefinite for drift-dominated data
            u, ok = _inner_solve(prob, u, opts, report, nonneg_slopes=True)
        eta_new, zeta_new = _select_terms(prob, FeFunction(mesh, u), opts.selection)
        sel_gap = 0.0
        if eta_new is not None:
            sel_gap = max(sel_gap, float(np.max(np.abs(eta_new - eta), initial=0.0)))
        if zeta_new is not None:
            sel_gap = max(sel_gap, float(np.max(np.abs(zeta_new - zeta), initial=0.0)))
        eta, zeta = eta_new, zeta_new
        if ok and sel_gap <= max(opts.tol, 1e-12):
            break

    uf = FeFunction(mesh, u)
    report.residual = vi_residual(prob, uf, eta, zeta)
    report.converged = report.residual <= opts.tol and sel_gap <= max(opts.tol, 1e-12)
    if not report.converged:
        report.message = (
            f"not converged: residual {report.residual:.3e}, selection gap {sel_gap:.3e}"
        )
    if prob.aux is not None:
        td = prob.aux.truncation
        below = float(np.max(td.lower.coeffs - u, initial=0.0))
        above = float(np.max(u - td.upper.coeffs, initial=0.0))
        report.enclosure_status = {
            "below_lower": below,
            "above_upper": above,
            "enclosed": bool(below <= 10 * opts.tol and above <= 10 * opts.tol),
        }
    report.wall_time = time.perf_counter() - start
    return uf, eta, zeta, report


# ---------------------------------------------------------------------------
# auxiliary problem of the truncation-penalty construction


def build_auxiliary(prob: VIProblem, td: TruncationData) -> VIProblem:
    """Auxiliary problem: truncated reactions plus the interval penalty.

    The lower-order term becomes the truncation of ``f`` (and of the
    boundary reaction) between the bounds of ``td``, and the penalty enters
    the residual with a positive sign.  With a single lower/upper bound pair
    the compensator corrections vanish identically and are omitted.  A
    converged solution lying inside the bounds makes the penalty vanish and
    the truncated reactions coincide with the originals, so it solves the
    original problem with the same residual.
    """
    if td.mesh is not prob.mesh:
        raise ValueError("truncation data lives on a different mesh")
    f0 = truncate_multifunction(prob.f, td) if prob.f is not None else None
    f0_gamma = (
        truncate_multifunction(prob.f_gamma, td) if prob.f_gamma is not None else None
    )
    aux = AuxiliaryTerms(truncation=td, q_field=prob.exponents.q)
    return prob.with_terms(f=f0, f_gamma=f0_gamma, aux=aux)


# ---------------------------------------------------------------------------
# coercivity probe


def check_coercivity(prob: VIProblem, u0: FeFunction, radii, samples_per_radius=8, seed=0):
    """Sample the sphere of each radius for the leading-term pairing.

    For each radius R, feasible samples with Luxemburg norm R are drawn
    (Gaussian nodal vectors projected onto the constraint set, rescaled by
    bisection) and the minimum over endpoint selections of

        <Au + eta + zeta, u - u0>

    is recorded.  This is a sampling probe: a nonnegative minimum means *no
    violation found at the sampled points*, never a coercivity proof.
    """
    mesh = prob.mesh
    ed = prob.exponents
    lo, hi = prob.constraint.bounds(mesh)
    if np.any(u0.coeffs < lo - 1e-12) or np.any(u0.coeffs > hi + 1e-12):
        raise ValueError("base point is infeasible")
    rng = np.random.default_rng(seed)
    kind = ModularKind.sobolev()
    rows = []
    for R in radii:
        best = np.inf
        found = 0
        for _ in range(int(samples_per_radius)):
            u = _sample_on_sphere(prob, rng, float(R), kind)
            if u is None:
                continue
            found += 1
            val = _min_pairing(prob, u, u0)
            best = min(best, val)
        if found == 0:
            raise ValueError(f"no feasible sample found at radius {R}")
        rows.append(
            {
                "radius": float(R),
                "samples": found,
                "min_pairing": float(best),
                "violation_found": bool(best <= 0.0),
            }
        )
    summary = (
        "violation found at sampled radii"
        if any(r["violation_found"] for r in rows)
        else "no violation found at sampled radii"
    )
    return {"rows": rows, "summary": summary}


def _sample_on_sphere(prob: VIProblem, rng, R, kind, norm_tol=1e-6):
    mesh, ed = prob.mesh, prob.exponents
    for _ in range(8):
        g = rng.normal(size=mesh.n_nodes)

        def projected(t):
            return FeFunction(mesh, prob.constraint.project(t * g, mesh))

        def norm_of(t):
            return luxemburg_norm(kind, ed, projected(t))

        t_hi = 1.0
        grew = False
        for _ in range(200):
            if norm_of(t_hi) >= R:
                grew = True
                break
            t_hi *= 2.0
        if not grew:
            continue
        t_lo = 0.0
        for _ in range(200):
            mid = 0.5 * (t_lo + t_hi)
            n = norm_of(mid)
            if abs(n - R) <= norm_tol:
                return projected(mid)
            if n < R:
                t_lo = mid
            else:
                t_hi = mid
        if abs(norm_of(t_hi) - R) <= norm_tol:
            return projected(t_hi)
    return None


def _min_pairing(prob: VIProblem, u: FeFunction, u0: FeFunction):
    """min over endpoint selections of <Au + eta + zeta, u - u0>."""
    mesh = prob.mesh
    d = u.coeffs - u0.coeffs
    val = float(prob.operator.apply(u) @ d)
    if prob.f is not None:
        dq = FeFunction(mesh, d).values_at_quad()
        lo, hi = prob.f.eval_interval(mesh.quad_points, u.values_at_quad())
        integrand = np.where(dq > 0, lo * dq, hi * dq)
        val += float(np.sum(mesh.quad_weights * integrand))
    if prob.f_gamma is not None:
        bd = mesh.boundary("gamma")
        dq = FeFunction(mesh, d).boundary_values("gamma")
        lo, hi = prob.f_gamma.eval_interval(bd["quad_points"], u.boundary_values("gamma"))
        integrand = np.where(dq > 0, lo * dq, hi * dq)
        val += float(np.sum(bd["quad_weights"] * integrand))
    return val
