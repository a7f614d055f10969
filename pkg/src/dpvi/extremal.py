"""Sub/supersolution certificates, enclosure solves and extremal iterations.

A subsolution certificate checks the one-sided variational inequality over
the generating directions: for P1 elements every admissible nonnegative
direction is a nonnegative combination of nodal hats, so the check is
finite and complete at the discrete level.  For a lower obstacle the
admissible hats for the *sub*solution test sit at nodes strictly above the
obstacle (at contact nodes no feasible direction exists); the supersolution
test uses every free node, and box constraints restrict symmetrically.

The enclosure solve runs the truncation-penalty construction: between a
certified pair of bounds the truncated problem is solvable regardless of
coercivity of the original reaction, the converged iterate must come back
inside the bounds (anything else is reported, never accepted silently),
and there the penalty vanishes, so the iterate solves the original problem.

Extremal candidates are produced by monotone interval-shrinking iterations
and certified post hoc: ordering, residuals and enclosure are all checked
on the computed functions, never assumed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .mesh import FeFunction, fe_interpolate
from .multifun import TruncationData, TwoArgIntervalMultifunction, assemble_source, penalty
from .visolve import (
    SolverError,
    SolverOptions,
    VIProblem,
    build_auxiliary,
    solve_vi,
    vi_residual,
)

__all__ = [
    "CertificateReport",
    "OrderedInterval",
    "SolutionSet",
    "verify_subsolution",
    "verify_supersolution",
    "construct_obstacle_bounds",
    "solve_enclosed",
    "extremal_pair",
    "discontinuous_fixed_point",
    "EnclosureError",
]


class EnclosureError(RuntimeError):
    """A converged auxiliary solution escaped its bounds (failed certificate
    or solver failure); carries the worst offending node."""


@dataclass
class CertificateReport:
    side: str  # 'subsolution' | 'supersolution'
    margin: float  # worst signed slack; nonnegative (to tol) means verified
    worst_node: Optional[int]
    passed: bool
    lattice_ok: bool
    lattice_note: str
    selection_rule: str
    tested_nodes: int


@dataclass
class OrderedInterval:
    """Certified bound pair, optionally carrying its construction data."""

    lower: FeFunction
    upper: FeFunction
    lower_certificate: Optional[CertificateReport] = None
    upper_certificate: Optional[CertificateReport] = None
    M: float = 0.0
    c_psi: Optional[float] = None
    k1: object = None
    k2: object = None
    u1: Optional[FeFunction] = None
    u2: Optional[FeFunction] = None

    def __post_init__(self):
        if np.any(self.lower.coeffs > self.upper.coeffs):
            raise ValueError("interval out of order: lower > upper at some node")

    def certified(self, tol=1e-9):
        return (
            self.lower_certificate is not None
            and self.upper_certificate is not None
            and self.lower_certificate.passed
            and self.upper_certificate.passed
        )


@dataclass
class SolutionSet:
    """Converged solutions collected inside an ordered interval."""

    members: list = field(default_factory=list)
    smallest: Optional[FeFunction] = None
    greatest: Optional[FeFunction] = None
    residuals: list = field(default_factory=list)
    histories: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# certificates


def _one_sided_margins(prob: VIProblem, u: FeFunction, rule, side, tol):
    mesh = prob.mesh
    eta = prob.f.select(u, rule) if prob.f is not None else None
    zeta = prob.f_gamma.select(u, rule) if prob.f_gamma is not None else None
    r = prob.operator.apply(u)
    if eta is not None:
        r = r + assemble_source(eta, mesh, "interior")
    if zeta is not None:
        r = r + assemble_source(zeta, mesh, "boundary_gamma")

    lo, hi = prob.constraint.bounds(mesh)
    free = mesh.free_node_mask
    if side == "subsolution":
        # directions (u - phi)^+ exist only where u sits strictly above the
        # lower bound; the inequality there is r_i <= 0
        testable = free & (u.coeffs > lo)
        margins = -r
    else:
        # directions (phi - u)^+ exist only strictly below the upper bound;
        # the inequality there is r_i >= 0
        testable = free & (u.coeffs < hi)
        margins = r
    idx = np.flatnonzero(testable)
    if len(idx) == 0:
        return 0.0, None, 0
    sub = margins[idx]
    worst_pos = int(np.argmin(sub))
    return float(sub[worst_pos]), int(idx[worst_pos]), len(idx)


def _lattice_condition(prob: VIProblem, u: FeFunction, side):
    kind = prob.constraint.kind
    lo, hi = prob.constraint.bounds(prob.mesh)
    if side == "subsolution":
        # join(u, K) stays in K: automatic unless an upper bound exists
        if kind == "box":
            ok = bool(np.all(u.coeffs <= hi + 1e-12))
            return ok, "join with the set respects the upper bound" if ok else (
                "join with the set exceeds the upper bound"
            )
        return True, "automatic for this constraint set"
    if kind in ("obstacle", "box"):
        ok = bool(np.all(u.coeffs >= lo - 1e-12))
        return ok, "meet with the set respects the lower bound" if ok else (
            "meet with the set violates the obstacle"
        )
    return True, "automatic for this constraint set"


def verify_subsolution(u: FeFunction, prob: VIProblem, rule="lower", tol=1e-9):
    """Certificate that ``u`` is a discrete subsolution of the problem.

    Checks the lattice compatibility of the constraint set, selects the
    reaction at ``u`` with ``rule`` and evaluates the one-sided inequality
    over the generating hat directions.  The reported margin is the worst
    signed slack (nonnegative means verified).
    """
    lattice_ok, note = _lattice_condition(prob, u, "subsolution")
    margin, worst, tested = _one_sided_margins(prob, u, rule, "subsolution", tol)
    return CertificateReport(
        side="subsolution",
        margin=margin,
        worst_node=worst,
        passed=bool(lattice_ok and margin >= -tol),
        lattice_ok=lattice_ok,
        lattice_note=note,
        selection_rule=rule,
        tested_nodes=tested,
    )


def verify_supersolution(u: FeFunction, prob: VIProblem, rule="upper", tol=1e-9):
    """Certificate that ``u`` is a discrete supersolution (see
    :func:`verify_subsolution`)."""
    lattice_ok, note = _lattice_condition(prob, u, "supersolution")
    margin, worst, tested = _one_sided_margins(prob, u, rule, "supersolution", tol)
    return CertificateReport(
        side="supersolution",
        margin=margin,
        worst_node=worst,
        passed=bool(lattice_ok and margin >= -tol),
        lattice_ok=lattice_ok,
        lattice_note=note,
        selection_rule=rule,
        tested_nodes=tested,
    )


# ---------------------------------------------------------------------------
# constructed bounds from one-sided reaction envelopes


def _dirichlet_solve(prob: VIProblem, k_expr, opts):
    """Solution of the operator equation with constant-in-s reaction k."""
    from .multifun import IntervalMultifunction
    from .visolve import ConstraintSet

    mesh = prob.mesh
    f = IntervalMultifunction(mesh, k_expr, k_expr)
    sub = VIProblem(prob.operator, ConstraintSet.whole_space(), f)
    u, eta, zeta, rep = solve_vi(sub, opts)
    if not rep.converged:
        raise SolverError(f"bound construction solve failed: {rep.message}")
    return u


def _check_one_sided_envelopes(prob, k1_field, k2_field, s_lo, s_hi, n_samples=33):
    """Sampled check that f1 <= k1 and f2 >= k2 over the relevant state range."""
    if prob.f is None:
        return
    mesh = prob.mesh
    for s in np.linspace(s_lo, s_hi, n_samples):
        s_arr = np.full(mesh.quad_weights.shape, float(s))
        lo, hi = prob.f.eval_interval(mesh.quad_points, s_arr)
        gap1 = np.max(lo - k1_field)
        gap2 = np.max(k2_field - hi)
        if gap1 > 1e-10:
            raise ValueError(
                f"one-sided bound violated: f1(x,{s:.4g}) exceeds k1 by {gap1:.3e}"
            )
        if gap2 > 1e-10:
            raise ValueError(
                f"one-sided bound violated: f2(x,{s:.4g}) drops below k2 by {gap2:.3e}"
            )


def construct_obstacle_bounds(prob: VIProblem, k1, k2, c_psi=None, margin=1e-3,
                              opts: Optional[SolverOptions] = None):
    """Build a certified bound pair from one-sided reaction envelopes.

    ``k1`` bounds the lower endpoint from above (f1 <= k1) and produces the
    lower bound as the solution of the operator equation with reaction k1;
    ``k2`` bounds the upper endpoint from below and produces the upper bound
    after an upward shift M chosen so the shifted function clears both the
    obstacle ceiling ``c_psi`` and the lower bound, plus a safety margin.
    The one-sided envelopes are sampling-checked over the state range the
    construction actually uses, and both certificates are verified.
    """
    opts = opts or SolverOptions(tol=1e-10)
    mesh = prob.mesh
    allowed = ("x",) if mesh.dim == 1 else ("x", "y")
    from .expr import parse_expression

    k1_ast = parse_expression(k1, allowed) if isinstance(k1, str) else k1
    k2_ast = parse_expression(k2, allowed) if isinstance(k2, str) else k2
    u1 = _dirichlet_solve(prob, k1_ast, opts)
    u2 = _dirichlet_solve(prob, k2_ast, opts)

    terms = [0.0, float(np.max(u1.coeffs - u2.coeffs))]
    if prob.constraint.kind in ("obstacle", "box") and c_psi is not None:
        terms.append(float(c_psi) - float(np.min(u2.coeffs)))
    M = max(terms) + float(margin)
    upper = u2 + M
    lower = u1

    span = float(np.max(upper.coeffs) - np.min(lower.coeffs))
    slack = 0.05 * span + 1e-6
    k1_field = mesh.sample(k1_ast)
    k2_field = mesh.sample(k2_ast)
    _check_one_sided_envelopes(
        prob, k1_field, k2_field,
        float(np.min(lower.coeffs)) - slack, float(np.max(upper.coeffs)) + slack,
    )

    lower_cert = verify_subsolution(lower, prob, rule="lower")
    upper_cert = verify_supersolution(upper, prob, rule="upper")
    return OrderedInterval(
        lower=lower,
        upper=upper,
        lower_certificate=lower_cert,
        upper_certificate=upper_cert,
        M=M,
        c_psi=c_psi,
        k1=k1_ast,
        k2=k2_ast,
        u1=u1,
        u2=u2,
    )


# ---------------------------------------------------------------------------
# enclosure solve (truncation + penalty pipeline)


def solve_enclosed(prob: VIProblem, oi: OrderedInterval,
                   opts: Optional[SolverOptions] = None, require_certificates=True):
    """Solve inside a certified interval via the truncated-penalized problem.

    Returns ``(u, report)`` where u solves the *original* problem with
    residual at most the solver tolerance and lies inside the interval.  An
    iterate escaping the interval raises :class:`EnclosureError` with the
    worst node; it indicates a failed certificate or a solver failure and is
    never silently accepted.
    """
    opts = opts or SolverOptions()
    if require_certificates and not oi.certified():
        raise ValueError("interval certificates missing or failed; cannot enclose")
    td = TruncationData.from_bounds(oi.lower, oi.upper, f=prob.f, f_gamma=prob.f_gamma)
    aux_prob = build_auxiliary(prob, td)
    u, eta, zeta, report = solve_vi(aux_prob, opts)
    if not report.converged:
        raise SolverError(f"auxiliary solve failed: {report.message}")

    tol = opts.tol
    below = oi.lower.coeffs - u.coeffs
    above = u.coeffs - oi.upper.coeffs
    worst = max(float(np.max(below)), float(np.max(above)))
    if worst > 10 * tol:
        node = int(np.argmax(np.maximum(below, above)))
        raise EnclosureError(
            f"enclosure violated by {worst:.3e} at node {node}; "
            "certificate or solver failure"
        )
    u = FeFunction(u.mesh, np.clip(u.coeffs, oi.lower.coeffs, oi.upper.coeffs))

    pen = penalty(td, prob.exponents.q, u.values_at_quad())
    if float(np.max(np.abs(pen))) > 10 * tol:
        raise EnclosureError("penalty does not vanish at the converged iterate")

    eta_u = prob.f.select(u, opts.selection) if prob.f is not None else None
    zeta_u = prob.f_gamma.select(u, opts.selection) if prob.f_gamma is not None else None
    residual = vi_residual(prob, u, eta_u, zeta_u)
    if residual > 10 * tol:
        raise SolverError(
            f"enclosed iterate does not solve the original problem: residual {residual:.3e}"
        )
    report.residual = residual
    report.enclosure_status = {"below_lower": float(np.max(below, initial=0.0)),
                               "above_upper": float(np.max(above, initial=0.0)),
                               "enclosed": True}
    return u, report


# ---------------------------------------------------------------------------
# extremal iterations


def _extremal_iterate(prob: VIProblem, oi: OrderedInterval, opts, side, history):
    """Monotone interval-shrinking iteration toward one extremal candidate.

    The greatest candidate is approached from the upper bound with lower
    endpoint selections (the weakest reaction leaves the largest solution);
    the smallest candidate symmetrically from below with upper endpoint
    selections.
    """
    mesh = prob.mesh
    members = []
    if side == "greatest":
        moving = oi.upper
        rule = "lower"
    else:
        moving = oi.lower
        rule = "upper"
    fixed_lower, fixed_upper = oi.lower, oi.upper
    lower_cert, upper_cert = oi.lower_certificate, oi.upper_certificate

    it_opts = replace(opts, selection=rule)
    prev = None
    for k in range(1, opts.max_outer + 1):
        if side == "greatest":
            interval = OrderedInterval(fixed_lower, moving, lower_cert,
                                       verify_supersolution(moving, prob, "upper"))
        else:
            interval = OrderedInterval(moving, fixed_upper,
                                       verify_subsolution(moving, prob, "lower"),
                                       upper_cert)
        if not interval.certified():
            bad = interval.upper_certificate if side == "greatest" else interval.lower_certificate
            raise EnclosureError(
                f"iterate {k} failed its {bad.side} certificate "
                f"(margin {bad.margin:.3e} at node {bad.worst_node})"
            )
        u, rep = solve_enclosed(prob, interval, it_opts)
        members.append((u, rep.residual))
        update = float(np.max(np.abs(u.coeffs - moving.coeffs)))
        history.append({"iter": k, "max_update": update, "residual": rep.residual})
        if prev is not None:
            drift = u.coeffs - prev.coeffs if side == "greatest" else prev.coeffs - u.coeffs
            if np.max(drift) > 1e-10:
                raise EnclosureError(
                    f"extremal iteration not monotone at step {k} "
                    f"(worst drift {float(np.max(drift)):.3e})"
                )
        moving = u
        prev = u
        if update <= max(opts.tol, 1e-12):
            break
    return moving, members


def extremal_pair(prob: VIProblem, oi: OrderedInterval,
                  opts: Optional[SolverOptions] = None):
    """Smallest and greatest solution candidates inside a certified interval.

    Returns ``(u_smallest, u_greatest, solution_set)``.  Both candidates and
    every intermediate converged iterate solve the original problem; the
    set's ordering against the pair is certified post hoc and violations
    raise, because the monotone iteration is a heuristic whose output is
    only accepted with certificates.
    """
    opts = opts or SolverOptions()
    if not oi.certified():
        raise ValueError("interval certificates missing or failed")
    hist_g, hist_s = [], []
    greatest, members_g = _extremal_iterate(prob, oi, opts, "greatest", hist_g)
    smallest, members_s = _extremal_iterate(prob, oi, opts, "smallest", hist_s)

    sset = SolutionSet(smallest=smallest, greatest=greatest)
    for u, res in members_s + members_g:
        sset.members.append(u)
        sset.residuals.append(res)
    tol = 10 * opts.tol
    if np.any(smallest.coeffs > greatest.coeffs + tol):
        raise EnclosureError("extremal candidates out of order")
    for u in sset.members:
        if np.any(u.coeffs < smallest.coeffs - tol) or np.any(u.coeffs > greatest.coeffs + tol):
            raise EnclosureError("a collected solution escapes the extremal pair")
    sset.histories = {"greatest": hist_g, "smallest": hist_s}
    return smallest, greatest, sset


# ---------------------------------------------------------------------------
# discontinuous reactions via the frozen-variable fixed point


def discontinuous_fixed_point(prob: VIProblem, j: TwoArgIntervalMultifunction,
                              oi: OrderedInterval, opts: Optional[SolverOptions] = None,
                              h3_samples=(5, 7)):
    """Extremal solutions for a reaction with a frozen-variable dependence.

    The two-argument interval [j1(x,r,s), j2(x,r,s)] must have both
    endpoints nonincreasing in r (validated by sampling over the interval's
    value range); then freezing r at the current iterate yields monotone
    outer iterations: from the upper bound with greatest frozen solutions
    (nonincreasing iterates) and from the lower bound with smallest frozen
    solutions (nondecreasing), each fixed point solving the original
    problem.  Violated iterate monotonicity is reported with its index.

    Returns ``(u_smallest, u_greatest, histories)``.
    """
    opts = opts or SolverOptions()
    if not oi.certified():
        raise ValueError("interval certificates missing or failed")
    lo_v = float(np.min(oi.lower.coeffs))
    hi_v = float(np.max(oi.upper.coeffs))
    pad = 0.05 * (hi_v - lo_v) + 1e-9
    r_values = np.linspace(lo_v - pad, hi_v + pad, h3_samples[0])
    s_values = np.linspace(lo_v - pad, hi_v + pad, h3_samples[1])
    mono = j.check_monotone(r_values, s_values)
    if not (mono["lower_nonincreasing"] and mono["upper_nonincreasing"]):
        raise ValueError(
            "frozen-variable monotonicity fails by "
            f"{max(mono['worst_lower_increase'], mono['worst_upper_increase']):.3e}; "
            "the fixed-point scheme is not applicable"
        )

    histories = {"greatest": [], "smallest": []}

    def outer(side):
        moving = oi.upper if side == "greatest" else oi.lower
        prev = None
        for k in range(1, opts.max_outer + 1):
            frozen = j.freeze(moving)
            probv = replace(prob, f=frozen)
            if side == "greatest":
                sup_cert = verify_supersolution(moving, probv, "upper")
                sub_cert = verify_subsolution(oi.lower, probv, "lower")
                interval = OrderedInterval(oi.lower, moving, sub_cert, sup_cert)
            else:
                sub_cert = verify_subsolution(moving, probv, "lower")
                sup_cert = verify_supersolution(oi.upper, probv, "upper")
                interval = OrderedInterval(moving, oi.upper, sub_cert, sup_cert)
            if not interval.certified():
                bad = sub_cert if not sub_cert.passed else sup_cert
                raise EnclosureError(
                    f"outer iterate {k} failed its {bad.side} certificate "
                    f"(margin {bad.margin:.3e})"
                )
            if side == "greatest":
                _, nxt, _ = extremal_pair(probv, interval, opts)
            else:
                nxt, _, _ = extremal_pair(probv, interval, opts)
            update = float(np.max(np.abs(nxt.coeffs - moving.coeffs)))
            res = vi_residual(
                probv, nxt,
                frozen.select(nxt, "lower" if side == "greatest" else "upper"),
                prob.f_gamma.select(nxt, opts.selection) if prob.f_gamma else None,
            )
            histories[side].append({"iter": k, "max_update": update, "residual": res})
            if prev is not None:
                drift = nxt.coeffs - prev if side == "greatest" else prev - nxt.coeffs
                if np.max(drift) > 1e-10:
                    raise EnclosureError(
                        f"outer iterates not monotone at step {k} "
                        f"(worst drift {float(np.max(drift)):.3e})"
                    )
            prev = nxt.coeffs.copy()
            moving = nxt
            if update <= max(opts.tol, 1e-12):
                break
        return moving

    greatest = outer("greatest")
    smallest = outer("smallest")
    if np.any(smallest.coeffs > greatest.coeffs + 10 * opts.tol):
        raise EnclosureError("fixed-point extremals out of order")
    return smallest, greatest, histories
