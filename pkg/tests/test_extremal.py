import numpy as np
import pytest

from dpvi.extremal import (
    EnclosureError,
    OrderedInterval,
    construct_obstacle_bounds,
    discontinuous_fixed_point,
    extremal_pair,
    solve_enclosed,
    verify_subsolution,
    verify_supersolution,
)
from dpvi.mesh import FeFunction, build_mesh, fe_interpolate
from dpvi.multifun import IntervalMultifunction, TwoArgIntervalMultifunction
from dpvi.operator import DoublePhaseOperator
from dpvi.spaces import ExponentData
from dpvi.visolve import ConstraintSet, SolverOptions, VIProblem, solve_vi


def make_problem(dim=1, n=8, p="2", q="3", mu="0", constraint=None, f=None):
    mesh = build_mesh(dim, n)
    ed = ExponentData.from_expressions(mesh, p, q, mu)
    op = DoublePhaseOperator(mesh, ed)
    cs = constraint(mesh) if callable(constraint) else (constraint or ConstraintSet.whole_space())
    fm = IntervalMultifunction(mesh, *f) if f else None
    return VIProblem(op, cs, fm), mesh


# -- certificates --------------------------------------------------------------


def test_exact_solution_is_sub_and_supersolution():
    prob, mesh = make_problem(1, 16, f=("3", "3"))
    u, eta, zeta, rep = solve_vi(prob, SolverOptions(tol=1e-11))
    sub = verify_subsolution(u, prob)
    sup = verify_supersolution(u, prob)
    assert sub.passed and sup.passed
    assert abs(sub.margin) <= 1e-9 and abs(sup.margin) <= 1e-9


def test_obstacle_solution_is_sub_and_supersolution():
    prob, mesh = make_problem(
        1, 32, constraint=lambda m: ConstraintSet.obstacle(FeFunction.constant(m, -0.5)),
        f=("8", "8"),
    )
    u, eta, zeta, rep = solve_vi(prob, SolverOptions(tol=1e-11))
    assert rep.converged
    # at contact nodes the subsolution test has no admissible direction
    sub = verify_subsolution(u, prob)
    sup = verify_supersolution(u, prob)
    assert sub.passed and sup.passed
    assert sub.tested_nodes < np.count_nonzero(mesh.free_node_mask)


def test_one_sided_construction_verifies():
    # reaction below k1 = 0 gives the zero lower bound
    prob, mesh = make_problem(1, 16, f=("-1", "1"))
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1")
    assert oi.lower_certificate.passed and oi.upper_certificate.passed
    assert oi.lower_certificate.margin >= -1e-9
    assert oi.upper_certificate.margin >= -1e-9
    assert np.all(oi.lower.coeffs <= oi.upper.coeffs)


def test_failed_supersolution_reports_node():
    prob, mesh = make_problem(1, 8, f=("5", "5"))
    bad = fe_interpolate("0", mesh)  # residual entries are +5*h > 0 ... so a
    # supersolution with reaction +5 it IS; a subsolution it is not
    sub = verify_subsolution(bad, prob)
    sup = verify_supersolution(bad, prob)
    assert sup.passed
    assert not sub.passed
    assert sub.worst_node is not None


def test_k1_zero_gives_zero_lower_bound():
    prob, mesh = make_problem(1, 8, f=("-1", "0"))
    oi = construct_obstacle_bounds(prob, k1="0", k2="-1")
    np.testing.assert_allclose(oi.u1.coeffs, 0.0, atol=1e-9)


def test_poisson_upper_bound_closed_form():
    # k2 = -1: the upper-bound core solves the linear problem with solution
    # x(1-x)/2, maximum 1/8
    prob, mesh = make_problem(1, 64, f=("-1", "-1"))
    oi = construct_obstacle_bounds(prob, k1="-1", k2="-1")
    x = mesh.nodes[:, 0]
    np.testing.assert_allclose(oi.u2.coeffs, x * (1 - x) / 2, atol=1e-9)
    assert oi.u2.coeffs.max() == pytest.approx(0.125, abs=1e-9)


def test_m_formula_with_obstacle_ceiling():
    prob, mesh = make_problem(
        1, 32, constraint=lambda m: ConstraintSet.obstacle(FeFunction.constant(m, -0.5)),
        f=("0", "0"),
    )
    margin = 1e-3
    oi = construct_obstacle_bounds(prob, k1="0", k2="-1", c_psi=0.1, margin=margin)
    # u1 = 0, u2 = x(1-x)/2 with min 0: M = max(0, 0.1 - 0, 0) + margin
    assert oi.M == pytest.approx(0.1 + margin, abs=1e-9)
    assert np.all(oi.upper.coeffs >= 0.1 - 1e-12)


def test_envelope_sampling_violation_raises():
    prob, mesh = make_problem(1, 8, f=("10", "10"))
    with pytest.raises(ValueError, match="one-sided bound violated"):
        construct_obstacle_bounds(prob, k1="1", k2="-1")


# -- enclosure solve -----------------------------------------------------------


def test_enclosure_pipeline_obstacle():
    prob, mesh = make_problem(
        1, 64, constraint=lambda m: ConstraintSet.obstacle(FeFunction.constant(m, -0.5)),
        f=("8", "8"),
    )
    oi = construct_obstacle_bounds(prob, k1="8", k2="8", c_psi=0.1)
    assert oi.certified()
    u, rep = solve_enclosed(prob, oi, SolverOptions(tol=1e-10))
    # same solution as the direct solve
    u_direct, *_ = solve_vi(prob, SolverOptions(tol=1e-10))
    assert np.max(np.abs(u.coeffs - u_direct.coeffs)) <= 1e-8
    assert np.all(u.coeffs >= oi.lower.coeffs - 1e-9)
    assert np.all(u.coeffs <= oi.upper.coeffs + 1e-9)


def test_enclosure_degenerate_interval():
    prob, mesh = make_problem(1, 16, f=("2", "2"))
    u, eta, zeta, rep = solve_vi(prob, SolverOptions(tol=1e-11))
    oi = OrderedInterval(u, u, verify_subsolution(u, prob), verify_supersolution(u, prob))
    v, rep2 = solve_enclosed(prob, oi, SolverOptions(tol=1e-9))
    np.testing.assert_allclose(v.coeffs, u.coeffs, atol=1e-8)


def test_enclosure_requires_certificates():
    prob, mesh = make_problem(1, 8, f=("1", "1"))
    bad = OrderedInterval(fe_interpolate("0", mesh), fe_interpolate("1", mesh))
    with pytest.raises(ValueError, match="certificates"):
        solve_enclosed(prob, bad)


def test_noncoercive_drift_encloses():
    # drift -100 s with p = 1.2: the unconstrained reaction is noncoercive,
    # but the one-sided envelopes are state independent and the bound
    # construction stays small enough for the certificates to pass
    mesh = build_mesh(1, 32)
    ed = ExponentData.from_expressions(mesh, "1.2", "2", "0")
    op = DoublePhaseOperator(mesh, ed)
    psi = FeFunction.constant(mesh, -0.5)
    f = IntervalMultifunction(mesh, "-100*s - 1", "-100*s + 1")
    prob = VIProblem(op, ConstraintSet.obstacle(psi), f)
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1", c_psi=0.01, margin=1e-3)
    assert oi.lower_certificate.passed, oi.lower_certificate
    assert oi.upper_certificate.passed, oi.upper_certificate
    u, rep = solve_enclosed(prob, oi, SolverOptions(tol=1e-9))
    assert np.all(u.coeffs >= oi.lower.coeffs - 1e-9)
    assert np.all(u.coeffs <= oi.upper.coeffs + 1e-9)
    assert rep.residual <= 1e-8


# -- extremal iterations ---------------------------------------------------------


def test_extremal_pair_single_valued_collapses():
    prob, mesh = make_problem(1, 16, f=("1", "1"))
    oi = construct_obstacle_bounds(prob, k1="1", k2="1")
    lo, hi, sset = extremal_pair(prob, oi, SolverOptions(tol=1e-10))
    assert np.max(np.abs(lo.coeffs - hi.coeffs)) <= 1e-8


def test_extremal_pair_interval_reaction():
    prob, mesh = make_problem(1, 16, f=("-1", "1"))
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1")
    lo, hi, sset = extremal_pair(prob, oi, SolverOptions(tol=1e-10))
    assert np.all(lo.coeffs <= hi.coeffs + 1e-12)
    assert hi.coeffs.max() - lo.coeffs.max() > 0.1  # strict gap somewhere
    x = mesh.nodes[:, 0]
    np.testing.assert_allclose(hi.coeffs, x * (1 - x) / 2, atol=1e-8)
    np.testing.assert_allclose(lo.coeffs, -x * (1 - x) / 2, atol=1e-8)
    for u in sset.members:
        assert np.all(u.coeffs >= lo.coeffs - 1e-8)
        assert np.all(u.coeffs <= hi.coeffs + 1e-8)


def test_extremal_iterations_monotone():
    prob, mesh = make_problem(1, 16, f=("-1 + 0.5*s", "1 + 0.5*s"))
    oi = construct_obstacle_bounds(prob, k1="2", k2="-2")
    lo, hi, sset = extremal_pair(prob, oi, SolverOptions(tol=1e-10))
    assert np.all(lo.coeffs <= hi.coeffs + 1e-12)
    for hist in sset.histories.values():
        assert all(row["residual"] <= 1e-8 for row in hist)


# -- discontinuous fixed point ----------------------------------------------------


def test_fixed_point_reduces_without_frozen_dependence():
    prob, mesh = make_problem(1, 16, f=("-1", "1"))
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1")
    j = TwoArgIntervalMultifunction(mesh, "-1", "1")
    lo_fp, hi_fp, hist = discontinuous_fixed_point(prob.with_terms(f=None), j, oi,
                                                   SolverOptions(tol=1e-10))
    lo, hi, _ = extremal_pair(prob, oi, SolverOptions(tol=1e-10))
    assert np.max(np.abs(lo_fp.coeffs - lo.coeffs)) <= 1e-8
    assert np.max(np.abs(hi_fp.coeffs - hi.coeffs)) <= 1e-8


def test_fixed_point_step_reaction_monotone_iterates():
    # steep-ramp step in the frozen variable, both endpoints nonincreasing
    prob0, mesh = make_problem(1, 16)
    step = "min(1, max(0, 1000000*(r - 0.05)))"
    j = TwoArgIntervalMultifunction(mesh, f"-1 - 0.5*{step}", f"1 - 0.5*{step}")
    # bounds from the r-independent envelopes: j1 >= -1.5, j2 <= 1
    f_env = IntervalMultifunction(mesh, "-1.5", "1")
    prob = prob0.with_terms(f=f_env)
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1.5")
    lo, hi, hist = discontinuous_fixed_point(prob, j, oi, SolverOptions(tol=1e-9))
    assert np.all(lo.coeffs <= hi.coeffs + 1e-12)
    assert len(hist["greatest"]) <= 20 and len(hist["smallest"]) <= 20
    ups = [row["max_update"] for row in hist["greatest"]]
    assert ups[-1] <= 1e-9


def test_fixed_point_rejects_bad_monotonicity():
    prob, mesh = make_problem(1, 8, f=("-1", "1"))
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1")
    j = TwoArgIntervalMultifunction(mesh, "r - 1", "r + 1")  # increasing in r
    with pytest.raises(ValueError, match="monotonicity"):
        discontinuous_fixed_point(prob, j, oi, SolverOptions(tol=1e-9))
