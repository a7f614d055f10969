"""Variable-exponent data, modulars and Luxemburg norms.

The governing integrand is H(x,t) = t^p(x) + mu(x) t^q(x).  Four modulars
are provided:

* ``lebesgue_H``   : integral of |u|^p + mu |u|^q (values only)
* ``sobolev_H``    : the same integrand applied to both |grad u| and |u|
* ``variable_lp``  : integral of |u|^r(x) for a supplied exponent field
* ``weighted_lq``  : integral of mu |u|^q (a seminorm modular: it vanishes
  on nonzero functions wherever mu does, so no definiteness is claimed)

A Luxemburg norm is the scaling lambda with modular(u/lambda) = 1, located
by bracketing and bisection; the modular is continuous and strictly
decreasing in lambda whenever it is positive, so bisection is safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expr import parse_expression
from .mesh import FeFunction, Mesh

__all__ = [
    "ExponentData",
    "ModularKind",
    "ExponentReport",
    "validate_exponents",
    "modular",
    "luxemburg_norm",
]


class ExponentData:
    """Exponents p, q and weight mu sampled at interior quadrature points.

    Carries the scalar bounds p_minus/p_plus/q_minus/q_plus (extrema over the
    sampled points) and the critical exponent fields

        p_star(x)  = N p(x) / (N - p(x)),
        p_star_bd(x) = (N-1) p(x) / (N - p(x)),

    with the convention p_star = +inf where p(x) >= N, and everywhere in one
    dimension (finite-dimensional desk problems are solved regardless; the
    validator reports the dimension bound honestly for N = 2).
    """

    def __init__(self, mesh: Mesh, p, q, mu):
        shape = mesh.quad_weights.shape
        for name, field in (("p", p), ("q", q), ("mu", mu)):
            if np.asarray(field).shape != shape:
                raise ValueError(f"{name} field must have quadrature shape {shape}")
        self.mesh = mesh
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.N = mesh.dim
        self.p_minus = float(np.min(self.p))
        self.p_plus = float(np.max(self.p))
        self.q_minus = float(np.min(self.q))
        self.q_plus = float(np.max(self.q))
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = self.N - self.p
            self.p_star = np.where(denom > 0, self.N * self.p / denom, np.inf)
            self.p_star_bd = np.where(denom > 0, (self.N - 1) * self.p / denom, np.inf)
        if self.N == 1:
            self.p_star = np.full_like(self.p, np.inf)
            self.p_star_bd = np.full_like(self.p, np.inf)

    @classmethod
    def from_expressions(cls, mesh: Mesh, p_expr, q_expr, mu_expr):
        """Sample expression strings or ASTs for p, q, mu on ``mesh``."""
        allowed = ("x",) if mesh.dim == 1 else ("x", "y")

        def field(e):
            if isinstance(e, str):
                e = parse_expression(e, allowed)
            return mesh.sample(e)

        return cls(mesh, field(p_expr), field(q_expr), field(mu_expr))


@dataclass(frozen=True)
class ModularKind:
    """Which modular to evaluate; ``variable_lp`` carries its exponent field."""

    kind: str  # 'lebesgue_H' | 'sobolev_H' | 'variable_lp' | 'weighted_lq'
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("lebesgue_H", "sobolev_H", "variable_lp", "weighted_lq"):
            raise ValueError(f"unknown modular kind {self.kind!r}")
        if self.kind == "variable_lp":
            if self.r is None:
                raise ValueError("variable_lp requires an exponent field r")
            if np.any(np.asarray(self.r) <= 1):
                raise ValueError("variable_lp requires r(x) > 1 everywhere")

    @classmethod
    def lebesgue(cls):
        return cls("lebesgue_H")

    @classmethod
    def sobolev(cls):
        return cls("sobolev_H")

    @classmethod
    def variable_lp(cls, r):
        return cls("variable_lp", r=np.asarray(r, dtype=float))

    @classmethod
    def weighted_lq(cls):
        return cls("weighted_lq")


@dataclass
class ExponentReport:
    """Pointwise hypothesis violations; empty ``violations`` means all hold."""

    violations: list
    notes: list

    @property
    def ok(self):
        return not self.violations


def validate_exponents(ed: ExponentData) -> ExponentReport:
    """Check 1 < p(x) < N, p(x) < q(x) < p*(x) and mu(x) >= 0 pointwise.

    Every violated inequality is reported with its worst offending location.
    In one dimension the bound p(x) < N is not applicable (p* = +inf by
    convention) and is recorded as a note instead.
    """
    violations = []
    notes = []
    mesh = ed.mesh
    pts = mesh.quad_points.reshape(-1, mesh.dim)

    def flag(mask, description, margin):
        flat = mask.ravel()
        if np.any(flat):
            worst = int(np.argmax(np.where(flat, margin.ravel(), -np.inf)))
            where = pts[worst]
            violations.append(
                {
                    "condition": description,
                    "count": int(np.count_nonzero(flat)),
                    "worst_point": tuple(float(c) for c in where),
                    "worst_margin": float(margin.ravel()[worst]),
                }
            )

    flag(ed.p <= 1.0, "p(x) > 1", 1.0 - ed.p)
    if ed.N >= 2:
        flag(ed.p >= ed.N, "p(x) < N", ed.p - ed.N)
    else:
        notes.append("N = 1: dimension bound p(x) < N not applicable, p* = +inf")
    flag(ed.q <= ed.p, "p(x) < q(x)", ed.p - ed.q)
    finite = np.isfinite(ed.p_star)
    flag(finite & (ed.q >= ed.p_star), "q(x) < p*(x)", np.where(finite, ed.q - ed.p_star, -np.inf))
    flag(ed.mu < 0.0, "mu(x) >= 0", -ed.mu)
    return ExponentReport(violations=violations, notes=notes)


def _check_function(ed, u):
    if u.mesh is not ed.mesh:
        raise ValueError("function and exponent data live on different meshes")


def _modular_from_samples(kind: ModularKind, ed: ExponentData, vals, grad_norm, scale=1.0):
    """Quadrature sum of the modular integrand for pre-sampled |u| and |grad u|."""
    w = ed.mesh.quad_weights
    a = np.abs(vals) * scale
    if kind.kind == "variable_lp":
        return float(np.sum(w * a**kind.r))
    if kind.kind == "weighted_lq":
        return float(np.sum(w * ed.mu * a**ed.q))
    total = np.sum(w * (a**ed.p + ed.mu * a**ed.q))
    if kind.kind == "sobolev_H":
        g = np.abs(grad_norm) * scale
        total += np.sum(w * (g**ed.p + ed.mu * g**ed.q))
    return float(total)


def modular(kind: ModularKind, ed: ExponentData, u: FeFunction) -> float:
    """Quadrature approximation of the requested modular of ``u``."""
    _check_function(ed, u)
    vals = u.values_at_quad()
    grad_norm = None
    if kind.kind == "sobolev_H":
        g = u.gradient_at_elements()
        grad_norm = np.broadcast_to(
            np.linalg.norm(g, axis=1)[:, None], vals.shape
        )
    return _modular_from_samples(kind, ed, vals, grad_norm)


def luxemburg_norm(kind: ModularKind, ed: ExponentData, u: FeFunction, tol=1e-10) -> float:
    """The scaling lambda with modular(u/lambda) = 1, to |modular - 1| <= tol.

    Returns 0 for the zero function, and 0 when the modular vanishes
    identically under scaling (the weighted seminorm case with mu = 0 on the
    support of u).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_function(ed, u)
    vals = u.values_at_quad()
    grad_norm = None
    if kind.kind == "sobolev_H":
        g = u.gradient_at_elements()
        grad_norm = np.broadcast_to(np.linalg.norm(g, axis=1)[:, None], vals.shape)

    def rho(lam):
        value = _modular_from_samples(kind, ed, vals, grad_norm, scale=1.0 / lam)
        if not np.isfinite(value):
            raise ValueError("modular is not finite; cannot bracket the norm")
        return value

    if not np.any(vals) and (grad_norm is None or not np.any(grad_norm)):
        return 0.0
    if rho(1.0) == 0.0:
        # positive-degree seminorm degenerate direction
        return 0.0

    lo = hi = 1.0
    while rho(hi) > 1.0:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("modular does not drop below 1; cannot bracket the norm")
    while rho(lo) < 1.0:
        lo *= 0.5
        if lo < 1e-300:
            raise ValueError("modular does not exceed 1; cannot bracket the norm")
    # rho(lo) >= 1 >= rho(hi); bisect until the bracket is negligibly thin
    for _ in range(200):
        if hi - lo <= 1e-13 * hi:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if rho(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    if abs(rho(lam) - 1.0) > tol:
        raise ValueError("bisection failed to meet the modular tolerance")
    return lam
