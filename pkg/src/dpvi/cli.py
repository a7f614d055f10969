"""Configuration-driven command line interface.

Commands operate on a YAML problem description and write deterministic
artifacts (CSV solutions, JSON reports, iteration histories) to an output
directory:

    dpvi solve            --config problem.yaml --out results/
    dpvi extremal         --config problem.yaml --out results/
    dpvi verify           --config problem.yaml --out results/
    dpvi norm             --config problem.yaml
    dpvi probe-coercivity --config problem.yaml --radii 1,2,4,8 --out results/

Exit codes: 0 success, 2 configuration/validation error, 3 non-convergence.
Identical configuration and seed produce byte-identical output files; wall
times are printed to standard error only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .expr import ExprError
from .extremal import (
    EnclosureError,
    construct_obstacle_bounds,
    discontinuous_fixed_point,
    extremal_pair,
    verify_subsolution,
    verify_supersolution,
)
from .mesh import FeFunction, build_mesh, fe_interpolate
from .multifun import IntervalMultifunction, TwoArgIntervalMultifunction
from .operator import DoublePhaseOperator
from .spaces import ExponentData, ModularKind, luxemburg_norm, modular, validate_exponents
from .visolve import (
    ConstraintSet,
    SolverError,
    SolverOptions,
    VIProblem,
    check_coercivity,
    solve_vi,
)

SCHEMA_VERSION = 1

_TOP_LEVEL_KEYS = {
    "schema",
    "mesh",
    "exponents",
    "constraint",
    "f",
    "f_gamma",
    "j",
    "bounds",
    "solver",
    "function",
}

_BLOCK_KEYS = {
    "mesh": {"dim", "n", "gamma_predicate"},
    "exponents": {"p", "q", "mu"},
    "constraint": {"kind", "psi", "psi_upper", "c_psi"},
    "f": {"f1", "f2"},
    "f_gamma": {"f1", "f2"},
    "j": {"j1", "j2"},
    "bounds": {"k1", "k2", "margin", "u_lower", "u_upper"},
    "solver": {"tol", "max_iter", "selection", "seed"},
    "function": {"u"},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration is not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a key-value document")
    unknown = set(cfg) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"missing or unsupported schema version (expected {SCHEMA_VERSION})")
    for block, allowed in _BLOCK_KEYS.items():
        if block in cfg:
            if not isinstance(cfg[block], dict):
                raise ConfigError(f"block {block!r} must be a mapping")
            extra = set(cfg[block]) - allowed
            if extra:
                raise ConfigError(f"unknown keys in {block!r}: {sorted(extra)}")
    for required in ("mesh", "exponents"):
        if required not in cfg:
            raise ConfigError(f"missing required block {required!r}")
    return cfg


def _require(cfg, block, command):
    if block not in cfg:
        raise ConfigError(f"command {command!r} requires the {block!r} block")
    return cfg[block]


def build_problem(cfg):
    mcfg = cfg["mesh"]
    try:
        mesh = build_mesh(
            int(mcfg.get("dim", 1)), int(mcfg.get("n", 8)), mcfg.get("gamma_predicate")
        )
        ecfg = cfg["exponents"]
        ed = ExponentData.from_expressions(
            mesh, str(ecfg.get("p", "2")), str(ecfg.get("q", "3")), str(ecfg.get("mu", "0"))
        )
        op = DoublePhaseOperator(mesh, ed)

        ccfg = cfg.get("constraint", {"kind": "whole_space"})
        kind = ccfg.get("kind", "whole_space")
        if kind == "whole_space":
            cs = ConstraintSet.whole_space()
        elif kind == "obstacle":
            cs = ConstraintSet.obstacle(fe_interpolate(str(ccfg["psi"]), mesh))
        elif kind == "box":
            cs = ConstraintSet.box(
                fe_interpolate(str(ccfg["psi"]), mesh),
                fe_interpolate(str(ccfg["psi_upper"]), mesh),
            )
        else:
            raise ConfigError(f"unknown constraint kind {kind!r}")

        f = None
        if "f" in cfg:
            f = IntervalMultifunction(mesh, str(cfg["f"]["f1"]), str(cfg["f"]["f2"]))
        f_gamma = None
        if "f_gamma" in cfg:
            f_gamma = IntervalMultifunction(
                mesh, str(cfg["f_gamma"]["f1"]), str(cfg["f_gamma"]["f2"]), on_boundary=True
            )
        prob = VIProblem(op, cs, f, f_gamma)
    except (ExprError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return prob


def solver_options(cfg, args):
    scfg = cfg.get("solver", {})
    tol = args.tol if args.tol is not None else float(scfg.get("tol", 1e-9))
    max_iter = args.max_iter if args.max_iter is not None else int(scfg.get("max_iter", 200))
    selection = args.selection or scfg.get("selection", "midpoint")
    seed = args.seed if args.seed is not None else int(scfg.get("seed", 0))
    return SolverOptions(tol=tol, max_iter=max_iter, selection=selection, seed=seed)


def make_interval(prob, cfg, opts, command):
    bcfg = _require(cfg, "bounds", command)
    if "u_lower" in bcfg or "u_upper" in bcfg:
        if not ("u_lower" in bcfg and "u_upper" in bcfg):
            raise ConfigError("explicit bounds need both u_lower and u_upper")
        from .extremal import OrderedInterval

        lower = fe_interpolate(str(bcfg["u_lower"]), prob.mesh)
        upper = fe_interpolate(str(bcfg["u_upper"]), prob.mesh)
        oi = OrderedInterval(
            lower,
            upper,
            verify_subsolution(lower, prob, "lower"),
            verify_supersolution(upper, prob, "upper"),
        )
        return oi
    if not ("k1" in bcfg and "k2" in bcfg):
        raise ConfigError("bounds block needs k1/k2 or u_lower/u_upper")
    c_psi = cfg.get("constraint", {}).get("c_psi")
    return construct_obstacle_bounds(
        prob,
        str(bcfg["k1"]),
        str(bcfg["k2"]),
        c_psi=float(c_psi) if c_psi is not None else None,
        margin=float(bcfg.get("margin", 1e-3)),
        opts=opts,
    )


# ---------------------------------------------------------------------------
# artifact writers (deterministic byte-for-byte for a fixed config and seed)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json_text(payload):
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _history_csv(rows):
    lines = ["iter,max_update,residual"]
    for row in rows:
        lines.append(f"{row['iter']},{row['max_update']!r},{row['residual']!r}")
    return "\n".join(lines) + "\n"


def _certificate_payload(cert):
    return {
        "side": cert.side,
        "margin": cert.margin,
        "passed": cert.passed,
        "worst_node": cert.worst_node,
        "lattice_ok": cert.lattice_ok,
        "lattice_note": cert.lattice_note,
        "selection_rule": cert.selection_rule,
        "tested_nodes": cert.tested_nodes,
    }


def _report_payload(report):
    return {
        "converged": report.converged,
        "outer_iterations": report.outer_iterations,
        "newton_iterations": report.newton_iterations,
        "residual": report.residual,
        "selection_rule": report.selection_rule,
        "active_set_history": report.active_set_history,
        "enclosure_status": report.enclosure_status,
        "message": report.message,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg, args, out):
    prob = build_problem(cfg)
    opts = solver_options(cfg, args)
    u, eta, zeta, report = solve_vi(prob, opts)
    _write(out / "solution.csv", u.to_csv())
    payload = _report_payload(report)
    _write(out / "report.json", _json_text(payload))
    _write(
        out / "report.txt",
        "solve: converged={converged} residual={residual!r} outer={outer_iterations} "
        "newton={newton_iterations}\n".format(**payload),
    )
    print(f"solve: residual {report.residual:.3e} after {report.newton_iterations} iterations",
          file=sys.stderr)
    return 0 if report.converged else 3


def cmd_extremal(cfg, args, out):
    prob = build_problem(cfg)
    opts = solver_options(cfg, args)
    oi = make_interval(prob, cfg, opts, "extremal")
    if not oi.certified():
        raise ConfigError("bound certificates failed; cannot run extremal iterations")
    if "j" in cfg:
        j = TwoArgIntervalMultifunction(prob.mesh, str(cfg["j"]["j1"]), str(cfg["j"]["j2"]))
        smallest, greatest, histories = discontinuous_fixed_point(prob, j, oi, opts)
    else:
        if prob.f is None:
            raise ConfigError("command 'extremal' requires an f block (or a j block)")
        smallest, greatest, sset = extremal_pair(prob, oi, opts)
        histories = sset.histories
    _write(out / "u_smallest.csv", smallest.to_csv())
    _write(out / "u_greatest.csv", greatest.to_csv())
    _write(out / "history_smallest.csv", _history_csv(histories["smallest"]))
    _write(out / "history_greatest.csv", _history_csv(histories["greatest"]))
    payload = {
        "ordered": bool(np.all(smallest.coeffs <= greatest.coeffs + 1e-12)),
        "outer_iterations": {k: len(v) for k, v in histories.items()},
        "bounds": {"M": oi.M},
    }
    _write(out / "report.json", _json_text(payload))
    _write(out / "report.txt", f"extremal: ordered={payload['ordered']}\n")
    return 0


def cmd_verify(cfg, args, out):
    prob = build_problem(cfg)
    opts = solver_options(cfg, args)
    oi = make_interval(prob, cfg, opts, "verify")
    payload = {
        "lower": _certificate_payload(oi.lower_certificate),
        "upper": _certificate_payload(oi.upper_certificate),
        "ordered": bool(np.all(oi.lower.coeffs <= oi.upper.coeffs)),
        "M": oi.M,
    }
    _write(out / "certificates.json", _json_text(payload))
    lines = [
        "verify: lower {} (margin {:.3e}), upper {} (margin {:.3e})".format(
            "passed" if payload["lower"]["passed"] else "FAILED",
            payload["lower"]["margin"],
            "passed" if payload["upper"]["passed"] else "FAILED",
            payload["upper"]["margin"],
        )
    ]
    _write(out / "certificates.txt", "\n".join(lines) + "\n")
    print(lines[0])
    return 0 if payload["lower"]["passed"] and payload["upper"]["passed"] else 3


def cmd_norm(cfg, args, out):
    prob = build_problem(cfg)
    fcfg = _require(cfg, "function", "norm")
    u = fe_interpolate(str(fcfg["u"]), prob.mesh)
    ed = prob.exponents
    report = validate_exponents(ed)
    lines = []
    for label, kind in (
        ("lebesgue_H", ModularKind.lebesgue()),
        ("sobolev_H", ModularKind.sobolev()),
    ):
        rho = modular(kind, ed, u)
        lam = luxemburg_norm(kind, ed, u, tol=1e-10)
        lines.append(f"{label} modular: {rho:.10g}")
        lines.append(f"{label} luxemburg norm: {lam:.10g}")
    lines.append(f"exponent hypotheses: {'ok' if report.ok else 'violated'}")
    for v in report.violations:
        lines.append(f"  violated: {v['condition']} at {v['count']} points")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is not None:
        _write(out / "norm.txt", text)
    return 0


def cmd_probe_coercivity(cfg, args, out):
    prob = build_problem(cfg)
    opts = solver_options(cfg, args)
    radii = [float(tok) for tok in (args.radii or "1,2,4,8").split(",") if tok]
    u0 = FeFunction(prob.mesh, prob.constraint.project(
        np.zeros(prob.mesh.n_nodes), prob.mesh))
    report = check_coercivity(prob, u0, radii, samples_per_radius=args.samples,
                              seed=opts.seed)
    lines = ["radius,min_pairing,violation_found"]
    for row in report["rows"]:
        lines.append(f"{row['radius']!r},{row['min_pairing']!r},{row['violation_found']}")
    csv_text = "\n".join(lines) + "\n"
    _write(out / "coercivity.csv", csv_text)
    _write(out / "coercivity.txt", report["summary"] + "\n")
    sys.stdout.write(report["summary"] + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dpvi",
        description="finite-element solvers for double-phase multi-valued "
        "variational inequalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "extremal", "verify", "norm", "probe-coercivity"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML problem description")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--selection", choices=("lower", "upper", "midpoint"), default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "probe-coercivity":
            p.add_argument("--radii", default="1,2,4,8",
                           help="comma-separated Luxemburg radii")
            p.add_argument("--samples", type=int, default=8)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        if args.command == "solve":
            return cmd_solve(cfg, args, out)
        if args.command == "extremal":
            return cmd_extremal(cfg, args, out)
        if args.command == "verify":
            return cmd_verify(cfg, args, out)
        if args.command == "norm":
            return cmd_norm(cfg, args, out)
        if args.command == "probe-coercivity":
            return cmd_probe_coercivity(cfg, args, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, EnclosureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
