"""Enclosure between constructed bounds, including a noncoercive reaction.

One-sided envelopes k1 >= f1 and k2 <= f2 produce a certified bound pair:
the lower bound solves the operator equation with reaction k1, the upper
bound is the k2-solution shifted upward until it clears the obstacle
ceiling.  The truncated-penalized auxiliary problem then finds a solution
between the bounds even when the raw reaction is badly noncoercive (a
drift -100 s dwarfs the degenerate p = 1.2 operator at large amplitudes);
the coercivity probe documents the failure of the naive approach.
"""

import numpy as np

from dpvi import (
    ConstraintSet,
    DoublePhaseOperator,
    ExponentData,
    FeFunction,
    IntervalMultifunction,
    SolverOptions,
    VIProblem,
    build_mesh,
    check_coercivity,
    construct_obstacle_bounds,
    solve_enclosed,
)


def main():
    mesh = build_mesh(1, 32)
    ed = ExponentData.from_expressions(mesh, "1.2", "2", "0")
    op = DoublePhaseOperator(mesh, ed)
    prob = VIProblem(
        op,
        ConstraintSet.obstacle(FeFunction.constant(mesh, -0.5)),
        IntervalMultifunction(mesh, "-100*s - 1", "-100*s + 1"),
    )

    print("== coercivity probe (sampling, not a proof) ==")
    u0 = FeFunction.zero(mesh)
    probe = check_coercivity(prob, u0, radii=(0.5, 2.0, 8.0), samples_per_radius=6, seed=0)
    for row in probe["rows"]:
        print(f"  radius {row['radius']:5.1f}: min pairing {row['min_pairing']:+.3e}"
              f"  violation={row['violation_found']}")
    print(f"  -> {probe['summary']}")

    print("\n== certified bounds from one-sided envelopes ==")
    oi = construct_obstacle_bounds(prob, k1="1", k2="-1", c_psi=0.01, margin=1e-3)
    print(f"  lower certificate: margin {oi.lower_certificate.margin:+.3e} "
          f"({'passed' if oi.lower_certificate.passed else 'FAILED'})")
    print(f"  upper certificate: margin {oi.upper_certificate.margin:+.3e} "
          f"({'passed' if oi.upper_certificate.passed else 'FAILED'})")
    print(f"  bounds span [{oi.lower.coeffs.min():+.5f}, {oi.upper.coeffs.max():+.5f}], "
          f"shift M = {oi.M:.4f}")

    print("\n== enclosure solve ==")
    u, report = solve_enclosed(prob, oi, SolverOptions(tol=1e-10))
    print(f"  residual of the original problem: {report.residual:.3e}")
    print(f"  enclosure: below {report.enclosure_status['below_lower']:.1e}, "
          f"above {report.enclosure_status['above_upper']:.1e}")
    print(f"  solution range [{u.coeffs.min():+.5f}, {u.coeffs.max():+.5f}]")
    inside = np.all(u.coeffs >= oi.lower.coeffs - 1e-9) and np.all(
        u.coeffs <= oi.upper.coeffs + 1e-9
    )
    print(f"  inside the certified interval: {inside}")


if __name__ == "__main__":
    main()
