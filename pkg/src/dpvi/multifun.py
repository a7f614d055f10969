"""Interval multifunctions, truncations, penalty and compensator terms.

A multi-valued reaction f(x,s) with closed convex values in R is exactly an
interval [f1(x,s), f2(x,s)]; endpoints are user expressions.  A two-argument
variant [j1(x,r,s), j2(x,r,s)] supports the discontinuous fixed-point
scheme, where the extra variable is frozen to a finite-element function
between outer iterations.

Given an ordered pair of bound functions (lower, upper) with frozen
endpoint selections, this module builds

* the truncated multifunction: the original interval between the bounds,
  the frozen lower selection below, the frozen upper selection above;
* the penalty that pushes iterates back into the interval, with growth
  q(x) - 1 outside;
* the piecewise-linear cutoff (1 below 0, descending to 0 at 1) and the
  compensator terms used when several lower or upper bound functions are
  combined.

All evaluations are pointwise over quadrature fields and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expr import eval_expression, parse_expression, variables_of
from .mesh import FeFunction, Mesh

__all__ = [
    "IntervalMultifunction",
    "TwoArgIntervalMultifunction",
    "FrozenIntervalMultifunction",
    "TruncationData",
    "TruncatedMultifunction",
    "cutoff",
    "penalty",
    "penalty_slope",
    "compensator",
    "truncate_multifunction",
    "assemble_source",
    "pick_endpoint",
    "SELECTION_RULES",
]

SELECTION_RULES = ("lower", "upper", "midpoint")


def _spatial_bindings(mesh: Mesh, points):
    pts = np.asarray(points, dtype=float)
    bindings = {"x": pts[..., 0]}
    if mesh.dim == 2:
        bindings["y"] = pts[..., 1]
    return bindings


def pick_endpoint(rule, lo, hi):
    if rule == "lower":
        return lo
    if rule == "upper":
        return hi
    if rule == "midpoint":
        return 0.5 * (lo + hi)
    raise ValueError(f"selection rule must be one of {SELECTION_RULES}, got {rule!r}")


class IntervalMultifunction:
    """f(x,s) = [f1(x,s), f2(x,s)] from endpoint expressions.

    ``on_boundary`` marks whether the multifunction acts in the domain or on
    the natural boundary part; it only affects which points it is evaluated
    at.  Endpoint order f1 <= f2 is checked at every evaluation.
    """

    def __init__(self, mesh: Mesh, lower, upper, on_boundary=False):
        allowed = ("x", "s") if mesh.dim == 1 else ("x", "y", "s")
        self.mesh = mesh
        self.lower = parse_expression(lower, allowed) if isinstance(lower, str) else lower
        self.upper = parse_expression(upper, allowed) if isinstance(upper, str) else upper
        self.on_boundary = bool(on_boundary)
        for name, ast in (("f1", self.lower), ("f2", self.upper)):
            extra = variables_of(ast) - set(allowed)
            if extra:
                raise ValueError(f"{name} uses unknown variables {sorted(extra)}")

    def eval_interval(self, points, s):
        """Endpoint values ([lo, hi]) at ``points`` for state values ``s``."""
        s = np.asarray(s, dtype=float)
        bindings = _spatial_bindings(self.mesh, points)
        bindings["s"] = s
        lo = np.broadcast_to(np.asarray(eval_expression(self.lower, bindings), float), s.shape)
        hi = np.broadcast_to(np.asarray(eval_expression(self.upper, bindings), float), s.shape)
        bad = lo > hi
        if np.any(bad):
            pts = np.broadcast_to(np.asarray(points, float), s.shape + (self.mesh.dim,))
            idx = np.unravel_index(np.argmax(lo - hi), s.shape)
            raise ValueError(
                "interval endpoints out of order (f1 > f2) at point "
                f"{tuple(float(c) for c in pts[idx])}: "
                f"[{float(lo[idx])}, {float(hi[idx])}]"
            )
        return lo.copy(), hi.copy()

    def select(self, u: FeFunction, rule="lower"):
        """Pointwise selection eta(x) in f(x, u(x)) at quadrature points."""
        if self.on_boundary:
            bd = self.mesh.boundary("gamma")
            if bd is None:
                raise ValueError("boundary multifunction needs gamma facets")
            points = bd["quad_points"]
            s = u.boundary_values("gamma")
        else:
            points = self.mesh.quad_points
            s = u.values_at_quad()
        lo, hi = self.eval_interval(points, s)
        return pick_endpoint(rule, lo, hi)


class TwoArgIntervalMultifunction:
    """[j1(x,r,s), j2(x,r,s)]: an interval reaction with a frozen variable r.

    The discontinuous fixed-point scheme requires both endpoints to be
    nonincreasing in r (the frozen variable); :meth:`check_monotone`
    validates this by sampling and reports the worst violation.
    """

    def __init__(self, mesh: Mesh, lower, upper):
        allowed = ("x", "r", "s") if mesh.dim == 1 else ("x", "y", "r", "s")
        self.mesh = mesh
        self.lower = parse_expression(lower, allowed) if isinstance(lower, str) else lower
        self.upper = parse_expression(upper, allowed) if isinstance(upper, str) else upper

    def eval_interval(self, points, r, s):
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        bindings = _spatial_bindings(self.mesh, points)
        bindings["r"] = r
        bindings["s"] = s
        shape = np.broadcast_shapes(r.shape, s.shape)
        lo = np.broadcast_to(np.asarray(eval_expression(self.lower, bindings), float), shape)
        hi = np.broadcast_to(np.asarray(eval_expression(self.upper, bindings), float), shape)
        if np.any(lo > hi):
            raise ValueError("interval endpoints out of order (j1 > j2)")
        return lo.copy(), hi.copy()

    def freeze(self, r_func: FeFunction):
        """Bind r to a finite-element function, yielding a one-argument interval."""
        return FrozenIntervalMultifunction(self, r_func)

    def check_monotone(self, r_values, s_values, tol=1e-10):
        """Sample whether r -> j1 and r -> j2 are nonincreasing.

        Returns a dict with flags and the worst signed increase found
        (positive means a violation of the required monotonicity).
        """
        pts = self.mesh.quad_points
        worst_lo = worst_hi = -np.inf
        r_values = sorted(float(r) for r in r_values)
        for s in s_values:
            s_arr = np.full(pts.shape[:-1], float(s))
            prev = None
            for r in r_values:
                lo, hi = self.eval_interval(pts, np.full_like(s_arr, r), s_arr)
                if prev is not None:
                    worst_lo = max(worst_lo, float(np.max(lo - prev[0])))
                    worst_hi = max(worst_hi, float(np.max(hi - prev[1])))
                prev = (lo, hi)
        return {
            "lower_nonincreasing": worst_lo <= tol,
            "upper_nonincreasing": worst_hi <= tol,
            "worst_lower_increase": worst_lo,
            "worst_upper_increase": worst_hi,
        }


class FrozenIntervalMultifunction:
    """One-argument view of a two-argument interval with r bound to a function."""

    def __init__(self, base: TwoArgIntervalMultifunction, r_func: FeFunction):
        if r_func.mesh is not base.mesh:
            raise ValueError("frozen function lives on a different mesh")
        self.base = base
        self.mesh = base.mesh
        self.r_func = r_func
        self.on_boundary = False

    def eval_interval(self, points, s):
        # interior quadrature layout only; r is evaluated at the same points
        r = self.r_func.values_at_quad()
        s = np.asarray(s, dtype=float)
        if s.shape != r.shape:
            raise ValueError("frozen interval expects interior quadrature layout")
        return self.base.eval_interval(points, r, s)

    def select(self, u: FeFunction, rule="lower"):
        lo, hi = self.eval_interval(self.mesh.quad_points, u.values_at_quad())
        return pick_endpoint(rule, lo, hi)


# ---------------------------------------------------------------------------
# truncation data and derived terms


@dataclass
class TruncationData:
    """Ordered bound pair with frozen endpoint selections.

    ``eta_lower/eta_upper`` are interior quadrature fields with
    eta_lower(x) in f(x, lower(x)) and eta_upper(x) in f(x, upper(x));
    ``zeta_lower/zeta_upper`` are the boundary analogues on gamma facets
    (None when there is no boundary multifunction or no gamma part).
    """

    lower: FeFunction
    upper: FeFunction
    eta_lower: Optional[np.ndarray] = None
    eta_upper: Optional[np.ndarray] = None
    zeta_lower: Optional[np.ndarray] = None
    zeta_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lower.mesh is not self.upper.mesh:
            raise ValueError("bounds live on different meshes")
        if np.any(self.lower.coeffs > self.upper.coeffs):
            raise ValueError("bounds out of order: lower > upper at some node")

    @property
    def mesh(self):
        return self.lower.mesh

    @classmethod
    def from_bounds(cls, lower, upper, f=None, f_gamma=None,
                    lower_rule="lower", upper_rule="upper"):
        """Freeze default selections: lower endpoint at the lower bound,
        upper endpoint at the upper bound (the choices under which one-sided
        bound constructions verify)."""
        eta_lo = f.select(lower, lower_rule) if f is not None else None
        eta_hi = f.select(upper, upper_rule) if f is not None else None
        zeta_lo = f_gamma.select(lower, lower_rule) if f_gamma is not None else None
        zeta_hi = f_gamma.select(upper, upper_rule) if f_gamma is not None else None
        return cls(lower, upper, eta_lo, eta_hi, zeta_lo, zeta_hi)

    def check_selections(self, f=None, f_gamma=None):
        """Verify the frozen selections lie inside the intervals at the bounds."""
        if f is not None and self.eta_lower is not None:
            lo, hi = f.eval_interval(self.mesh.quad_points, self.lower.values_at_quad())
            if np.any(self.eta_lower < lo - 1e-12) or np.any(self.eta_lower > hi + 1e-12):
                raise ValueError("eta_lower is not a selection of f at the lower bound")
            lo, hi = f.eval_interval(self.mesh.quad_points, self.upper.values_at_quad())
            if np.any(self.eta_upper < lo - 1e-12) or np.any(self.eta_upper > hi + 1e-12):
                raise ValueError("eta_upper is not a selection of f at the upper bound")


def cutoff(s):
    """Piecewise-linear descending cutoff: 1 for s <= 0, 1 - s on [0,1], 0 for s >= 1."""
    return np.clip(1.0 - np.asarray(s, dtype=float), 0.0, 1.0)


def penalty(td: TruncationData, q_field, s, points_kind="interior"):
    """Penalty value at state s: grows like (excess)^(q-1) outside the bounds.

    Positive above the upper bound, negative below the lower bound, zero on
    the interval, so it always pushes the state back toward the bounds.
    """
    if points_kind != "interior":
        raise ValueError("penalty acts on interior quadrature fields")
    s = np.asarray(s, dtype=float)
    lo = td.lower.values_at_quad()
    hi = td.upper.values_at_quad()
    q = np.asarray(q_field, dtype=float)
    out = np.zeros_like(s)
    above = s > hi
    below = s < lo
    if np.any(above):
        out[above] = (s[above] - hi[above]) ** (q[above] - 1.0)
    if np.any(below):
        out[below] = -((lo[below] - s[below]) ** (q[below] - 1.0))
    return out


def penalty_slope(td: TruncationData, q_field, s, floor=1e-8):
    """d(penalty)/ds, clamped near the kinks when q(x) < 2."""
    s = np.asarray(s, dtype=float)
    lo = td.lower.values_at_quad()
    hi = td.upper.values_at_quad()
    q = np.asarray(q_field, dtype=float)
    out = np.zeros_like(s)
    above = s > hi
    below = s < lo
    if np.any(above):
        d = np.maximum(s[above] - hi[above], floor)
        out[above] = (q[above] - 1.0) * d ** (q[above] - 2.0)
    if np.any(below):
        d = np.maximum(lo[below] - s[below], floor)
        out[below] = (q[below] - 1.0) * d ** (q[below] - 2.0)
    return out


class TruncatedMultifunction:
    """The truncation of ``f`` between the bounds of a :class:`TruncationData`.

    Below the lower bound the value set collapses to the frozen lower
    selection, above the upper bound to the frozen upper selection, and in
    between it is ``f`` itself.  Presents the same evaluation interface as
    :class:`IntervalMultifunction`.
    """

    def __init__(self, base, td: TruncationData, on_boundary=False):
        self.base = base
        self.td = td
        self.mesh = td.mesh
        self.on_boundary = bool(on_boundary)

    def _bounds_and_frozen(self, s_shape):
        td = self.td
        if self.on_boundary:
            lo_b = td.lower.boundary_values("gamma")
            hi_b = td.upper.boundary_values("gamma")
            eta_lo, eta_hi = td.zeta_lower, td.zeta_upper
        else:
            lo_b = td.lower.values_at_quad()
            hi_b = td.upper.values_at_quad()
            eta_lo, eta_hi = td.eta_lower, td.eta_upper
        if eta_lo is None or eta_hi is None:
            raise ValueError("truncation data carries no frozen selections here")
        if lo_b.shape != s_shape:
            raise ValueError("state layout does not match the truncation bounds")
        return lo_b, hi_b, eta_lo, eta_hi

    def eval_interval(self, points, s):
        s = np.asarray(s, dtype=float)
        lo_b, hi_b, eta_lo, eta_hi = self._bounds_and_frozen(s.shape)
        lo, hi = self.base.eval_interval(points, s)
        below = s < lo_b
        above = s > hi_b
        lo = np.where(below, eta_lo, np.where(above, eta_hi, lo))
        hi = np.where(below, eta_lo, np.where(above, eta_hi, hi))
        return lo, hi

    def select(self, u: FeFunction, rule="lower"):
        if self.on_boundary:
            bd = self.mesh.boundary("gamma")
            points, s = bd["quad_points"], u.boundary_values("gamma")
        else:
            points, s = self.mesh.quad_points, u.values_at_quad()
        lo, hi = self.eval_interval(points, s)
        return pick_endpoint(rule, lo, hi)


def truncate_multifunction(mf, td: TruncationData):
    """Truncated evaluator for an interior or boundary interval multifunction."""
    return TruncatedMultifunction(mf, td, on_boundary=getattr(mf, "on_boundary", False))


def compensator(kind, selection_here, selection_combined, bound_here, bound_combined, s):
    """Pointwise compensator used when several bound functions are combined.

    Parameters
    ----------
    kind : {'lower', 'upper'}
        Lower-bound compensators are weighted by the descending cutoff of
        (s - bound_here) / (bound_combined - bound_here); upper-bound
        compensators by one minus the cutoff of
        (s - bound_combined) / (bound_here - bound_combined).
    selection_here, selection_combined : arrays
        The member's frozen selection and the combined frozen selection.
    bound_here, bound_combined : arrays
        The member bound function and the combined bound, sampled alike.
    s : array
        State values.

    Values always lie in [0, |selection_here - selection_combined|].  Where
    the member bound coincides with the combined bound the compensator is
    defined as zero (the combined selection is re-chosen there, making the
    numerator vanish).
    """
    if kind not in ("lower", "upper"):
        raise ValueError("kind must be 'lower' or 'upper'")
    s = np.asarray(s, dtype=float)
    amp = np.abs(np.asarray(selection_here, float) - np.asarray(selection_combined, float))
    if kind == "lower":
        denom = np.asarray(bound_combined, float) - np.asarray(bound_here, float)
        num = s - np.asarray(bound_here, float)
    else:
        denom = np.asarray(bound_here, float) - np.asarray(bound_combined, float)
        num = s - np.asarray(bound_combined, float)
    shape = np.broadcast_shapes(s.shape, amp.shape, denom.shape, num.shape)
    num = np.broadcast_to(num, shape)
    denom = np.broadcast_to(denom, shape)
    amp = np.broadcast_to(amp, shape)
    ok = np.abs(denom) > 0.0
    ratio = np.zeros(shape)
    np.divide(num, denom, out=ratio, where=ok)
    w = cutoff(ratio)
    if kind == "upper":
        w = 1.0 - w
    return np.where(ok, amp * w, 0.0)


# ---------------------------------------------------------------------------
# source assembly


def assemble_source(field, mesh: Mesh, where="interior"):
    """Dual vector of a quadrature field: entries integral(field * hat_i).

    ``where`` selects the interior quadrature layout or the gamma boundary
    layout; an empty gamma part yields the zero vector.
    """
    out = np.zeros(mesh.n_nodes)
    if where == "interior":
        field = np.asarray(field, dtype=float)
        if field.shape != mesh.quad_weights.shape:
            raise ValueError(
                f"interior field shape {field.shape} does not match {mesh.quad_weights.shape}"
            )
        contrib = np.einsum("eq,qi->ei", mesh.quad_weights * field, mesh.basis)
        np.add.at(out, mesh.elements, contrib)
        return out
    if where == "boundary_gamma":
        bd = mesh.boundary("gamma")
        if bd is None:
            return out
        field = np.asarray(field, dtype=float)
        if field.shape != bd["quad_weights"].shape:
            raise ValueError(
                f"boundary field shape {field.shape} does not match {bd['quad_weights'].shape}"
            )
        contrib = np.einsum("fq,qi->fi", bd["quad_weights"] * field, bd["basis"])
        np.add.at(out, bd["facets"], contrib)
        return out
    raise ValueError("where must be 'interior' or 'boundary_gamma'")
