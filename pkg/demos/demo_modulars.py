"""Variable-exponent modulars and Luxemburg norms.

Builds exponent data on the unit interval and the unit square, validates
the pointwise hypotheses, and shows the norm-modular relations in action:
the unit-ball identity, the two-sided power bounds, and the plastic-number
norm of the constant function for p = 2, q = 3, mu = 1.
"""

import numpy as np

from dpvi import (
    ExponentData,
    FeFunction,
    ModularKind,
    build_mesh,
    fe_interpolate,
    luxemburg_norm,
    modular,
    validate_exponents,
)


def main():
    print("== exponent hypotheses ==")
    mesh2 = build_mesh(2, 8)
    for p, q, mu in (("1.5", "2", "0"), ("2", "3", "1"), ("1.5", "7", "x*y")):
        ed = ExponentData.from_expressions(mesh2, p, q, mu)
        report = validate_exponents(ed)
        status = "ok" if report.ok else "; ".join(
            f"{v['condition']} fails at {v['count']} points" for v in report.violations
        )
        print(f"  p={p}, q={q}, mu={mu}: {status}")

    print("\n== plastic-number norm ==")
    mesh = build_mesh(1, 16)
    ed = ExponentData.from_expressions(mesh, "2", "3", "1")
    one = FeFunction.constant(mesh, 1.0)
    lam = luxemburg_norm(ModularKind.lebesgue(), ed, one)
    print(f"  |1| in the mixed-power space on (0,1): {lam:.9f}")
    print(f"  check lambda^3 - lambda - 1 = {lam**3 - lam - 1:.2e}")

    print("\n== unit-ball identity and power bounds ==")
    rng = np.random.default_rng(0)
    ed = ExponentData.from_expressions(mesh, "1.6", "2.4", "0.5 + 0.5*x")
    kind = ModularKind.sobolev()
    for _ in range(3):
        u = FeFunction(mesh, rng.normal(size=mesh.n_nodes))
        lam = luxemburg_norm(kind, ed, u)
        rho_unit = modular(kind, ed, u * (1.0 / lam))
        small = u * (0.5 / lam)
        ns = luxemburg_norm(kind, ed, small)
        rho = modular(kind, ed, small)
        print(
            f"  |u| = {lam:8.4f}   modular(u/|u|) = {rho_unit:.12f}   "
            f"|v|=0.5: |v|^q+ = {ns**ed.q_plus:.5f} <= {rho:.5f} <= "
            f"|v|^p- = {ns**ed.p_minus:.5f}"
        )

    print("\n== gradient interpolant sanity ==")
    u = fe_interpolate("x*(1-x)", mesh)
    print(f"  modular of x(1-x), values+gradients: "
          f"{modular(ModularKind.sobolev(), ed, u):.6f}")


if __name__ == "__main__":
    main()
