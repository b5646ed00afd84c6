"""Command-line entry point: ``torusflow <command> [options]``.

Exit status is 0 when every verification passes, 2 when a verification
fails and 1 on usage errors (bad flags, malformed field specs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TorusFlowError
from .fields import TrigScalar, build_stratified2d, load_field
from .reporting import artifact, svg_scatter, write_json

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(eval_number(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def eval_number(tok):
    """Parse ``"1e4"``, ``"1/40"`` or ``"0.5"``."""
    tok = tok.strip()
    if "/" in tok:
        num, den = tok.split("/", 1)
        return float(num) / float(den)
    return float(tok)


THETAS = {
    "one": lambda: TrigScalar(1, 1.0),
    "sin": lambda: TrigScalar(1, 2.0, [((1,), 0.0, 1.0)]),
    "cos": lambda: TrigScalar(1, 2.0, [((1,), 1.0, 0.0)]),
    "sin2": lambda: TrigScalar(1, 3.0, [((2,), 0.0, 1.0)]),
    "mix": lambda: TrigScalar(1, 3.0, [((1,), 0.5, 0.0), ((3,), 0.0, 0.7)]),
}


def _theta(name):
    if name in THETAS:
        return THETAS[name]()
    try:
        return TrigScalar.from_json(json.loads(name), 1)
    except json.JSONDecodeError as exc:
        raise UsageError(f"unknown theta {name!r}; use one of {sorted(THETAS)} or an inline JSON scalar") from exc


def _settings(args):
    return {"rtol": args.rtol, "atol": args.atol}


def _out(args, name):
    return Path(args.out) / name


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    from .flow import integrate

    f = load_field(args.field)
    x0 = np.asarray(args.x0 if args.x0 is not None else [0.0] * f.dim)
    tr = integrate(f, x0, args.T, _settings(args), n_samples=args.samples)
    tr.to_csv(_out(args, "trajectory.csv"))
    write_json(
        _out(args, "simulate.json"),
        artifact(
            "simulate",
            {
                "x0": x0,
                "T": args.T,
                "end": tr.end,
                "rotation_vector": tr.rotation_vector,
                "steps": tr.steps,
                "rejected": tr.rejected,
                "max_error": tr.max_error,
                "stalled": tr.stalled,
            },
        ),
    )
    return EXIT_OK


def cmd_rotation_set(args):
    from .rotation import default_seeds, estimate_rotation_set, stepanoff_predict

    f = load_field(args.field)
    T = args.T
    horizons = args.horizons or [T / 100, T / 10, T]
    seeds = default_seeds(f.dim) if args.seeds is None else np.array(json.loads(Path(args.seeds).read_text()))
    est = estimate_rotation_set(f, seeds, horizons, _settings(args), min_horizon=args.min_horizon, point_tol=args.point_tol)
    rep = est.to_dict()
    if f.family == "stepanoff" and f.dim == 2 and not args.no_predict:
        rep["prediction"] = stepanoff_predict(f).to_dict()
    write_json(_out(args, "rotation_set.json"), artifact("rotation_set", rep))
    if args.svg and f.dim == 2 and est.hull is not None:
        seg = None
        if "prediction" in rep:
            seg = np.array(rep["prediction"]["endpoints"])
        Path(_out(args, "rotation_set.svg")).write_text(
            svg_scatter(est.vectors, est.hull.vertices, seg, f"case {est.case_label}"), encoding="utf-8"
        )
    print(f"case {est.case_label}")
    return EXIT_OK if est.case_label != "unresolved" else EXIT_FAIL


def _density_for(f, kind, N, theta):
    from .fields import ReciprocalScalar
    from .measures import DensityMeasure, build_mu_theta
    from .rotation import harmonic_mean

    if kind == "auto":
        kind = {"stream": "mu-theta", "stepanoff": "stepanoff-m"}.get(f.family, "uniform")
    if kind == "uniform":
        return DensityMeasure.uniform(f.dim, N)
    if kind == "mu-theta":
        return build_mu_theta(f, _theta(theta), N)
    if kind == "stepanoff-m":
        a = f.params["a"]
        return DensityMeasure.from_function(ReciprocalScalar(a), f.dim, N) if harmonic_mean(a).value > 0 else None
    raise UsageError(f"unknown density {kind!r}")


def cmd_invariance(args):
    from .measures import check_invariance, mass

    f = load_field(args.field)
    mu = _density_for(f, args.density, args.N, args.theta)
    if mu is None:
        raise UsageError("the requested density does not exist for this field")
    rep = check_invariance(mu, f, args.K, args.tol)
    out = rep.to_dict()
    out["mass"] = mass(mu, f)
    write_json(_out(args, "invariance.json"), artifact("invariance", out))
    print(f"residual {rep.residual:.3e} ({'pass' if rep.passed else 'fail'})")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_stream(args):
    from .measures import solve_stream

    f = load_field(args.field)
    mu = _density_for(f, args.density, args.N, args.theta)
    s = solve_stream(mu, f, args.K, args.tol)
    ok = s.reconstruction <= 1e-9
    write_json(
        _out(args, "stream.json"),
        artifact(
            "stream",
            {
                "K": s.K,
                "mass": s.mass,
                "orthogonality": s.orthogonality,
                "reconstruction": s.reconstruction,
                "hermitian_defect": s.hermitian_defect(),
                "coefficients": s.to_json(),
            },
        ),
    )
    return EXIT_OK if ok else EXIT_FAIL


def cmd_relations(args):
    from .measures import build_mu_theta
    from .relations import verify_pairwise_relations

    f = load_field(args.field)
    mu = build_mu_theta(f, _theta(args.theta1), args.N)
    nu = build_mu_theta(f, _theta(args.theta2), args.N)
    rep = verify_pairwise_relations(mu, nu, f, args.K)
    rep.write_csv(_out(args, "relations.csv"))
    d = rep.to_dict(args.tol)
    write_json(_out(args, "relations.json"), artifact("relations", d))
    print(f"max normalized residual {rep.max_residual:.3e}")
    return EXIT_OK if d["passed"] else EXIT_FAIL


def cmd_poly3d(args):
    from .flow import endpoints_parallel
    from .poly3d import build_polyhedral_field, load_vertices

    verts, seed = load_vertices(args.vertices)
    if args.seed is not None:
        seed = args.seed
    con = build_polyhedral_field(verts, seed)
    f = con.field
    write_json(_out(args, "field.json"), f.to_spec())
    X0 = np.array([c.point for c in con.cylinders])
    ends, status = endpoints_parallel(f, X0, args.T, _settings(args))
    q = ends / args.T
    dev = np.linalg.norm(q - np.array([c.vertex for c in con.cylinders]), axis=1)
    limit = 1e-6 + 10.0 / args.T
    report = con.report()
    report["axis_check"] = {"T": args.T, "quotients": q, "deviation": dev, "limit": limit}
    write_json(_out(args, "construction.json"), artifact("poly3d_construction", report))
    ok = bool(np.all(status == 0) and np.all(dev <= limit))
    print(f"R = {con.R:.5f}, max axis deviation {dev.max():.3e}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_stratified2d(args):
    from .fields import sample_grid

    strips = json.loads(Path(args.strips).read_text()) if Path(args.strips).exists() else json.loads(args.strips)
    f = build_stratified2d([int(c) for c in args.k], strips)
    pts = sample_grid(2, args.grid).reshape(-1, 2)
    vals = f.eval(pts)
    k = np.asarray(args.k, dtype=float)
    t = vals @ k / (k @ k)
    off = float(np.abs(vals - t[:, None] * k).max())
    write_json(_out(args, "field.json"), f.to_spec())
    write_json(
        _out(args, "stratified2d.json"),
        artifact("stratified2d", {"k": args.k, "speed_range": [float(t.min()), float(t.max())], "off_axis": off}),
    )
    return EXIT_OK if off <= 1e-12 else EXIT_FAIL


def cmd_homogenize(args):
    from .homogenization import conserved_integral, default_run, weak_error

    run = default_run(tuple(args.eps), args.t)
    tab = weak_error(run)
    tab.write_csv(_out(args, "errors.csv"))
    ok = True
    for m in range(len(run.tests)):
        e = tab.errors(m)
        ok &= all(e[i + 1] < e[i] for i in range(len(e) - 1)) and e[-1] <= args.rel_tol
    cons = {}
    if args.conservation:
        e0 = max(run.eps)
        vals = [conserved_integral(run, e0, tt) for tt in (0.0, run.t / 2, run.t)]
        cons = {"eps": e0, "values": vals, "spread": max(vals) - min(vals)}
        ok &= cons["spread"] <= 1e-6
    manifest = run.manifest()
    manifest["errors"] = tab.rows
    manifest["conservation"] = cons
    manifest["passed"] = bool(ok)
    write_json(_out(args, "homogenization.json"), artifact("homogenization_run", manifest))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_lift_check(args):
    from .flow import build_llibre_mackay, check_lift_condition, time_one_map, uniform_grid

    if args.map == "llibre-mackay":
        F, checks = build_llibre_mackay(args.c1, args.c2, uniform_grid(args.grid))
        f = load_field(args.field) if args.field else None
        rep = check_lift_condition(F, f)
        out = rep.to_dict()
        out["phi_checks"] = checks
        write_json(_out(args, "lift_check.json"), artifact("lift_check", out))
        print(rep.verdict)
        # success means the obstruction was certified
        return EXIT_OK if rep.obstruction else EXIT_FAIL
    if not args.field:
        raise UsageError("--field is required with --map time-one")
    f = load_field(args.field)
    F = time_one_map(f, uniform_grid(args.grid, f.dim), _settings(args))
    rep = check_lift_condition(F, f, scan=False)
    write_json(_out(args, "lift_check.json"), artifact("lift_check", rep.to_dict()))
    print(f"residual {rep.residual:.3e}")
    return EXIT_OK if rep.residual <= args.tol else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="torusflow", description="Flows on the torus: rotation sets, invariant measures, homogenization.")
    p.add_argument("--version", action="version", version=f"torusflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, integrator=True):
        sp.add_argument("--out", default=".", help="output directory")
        if integrator:
            sp.add_argument("--rtol", type=float, default=1e-10)
            sp.add_argument("--atol", type=float, default=1e-10)

    sp = sub.add_parser("simulate", help="integrate one orbit and export CSV")
    sp.add_argument("--field", required=True)
    sp.add_argument("--x0", type=_floats)
    sp.add_argument("--T", type=eval_number, default=100.0)
    sp.add_argument("--samples", type=int, default=101)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("rotation-set", help="estimate and classify the rotation set")
    sp.add_argument("--field", required=True)
    sp.add_argument("--T", type=eval_number, default=1e4)
    sp.add_argument("--horizons", type=_floats)
    sp.add_argument("--seeds", help="JSON file with a list of seed points")
    sp.add_argument("--point-tol", type=float, default=5e-3)
    sp.add_argument("--min-horizon", type=float, default=1e3)
    sp.add_argument("--svg", action="store_true")
    sp.add_argument("--no-predict", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_rotation_set)

    for name, func, help_ in (
        ("invariance", cmd_invariance, "spectral divergence of sigma b"),
        ("stream", cmd_stream, "stream function of an invariant density"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--field", required=True)
        sp.add_argument("--density", default="auto", choices=["auto", "uniform", "mu-theta", "stepanoff-m"])
        sp.add_argument("--theta", default="one")
        sp.add_argument("--N", type=int, default=256)
        sp.add_argument("--K", type=int, default=32)
        sp.add_argument("--tol", type=float, default=1e-10 if name == "invariance" else 1e-8)
        common(sp, integrator=False)
        sp.set_defaults(func=func)

    sp = sub.add_parser("relations", help="pairwise Fourier relations for two mu_theta measures")
    sp.add_argument("--field", required=True)
    sp.add_argument("--theta1", default="one")
    sp.add_argument("--theta2", default="sin")
    sp.add_argument("--K", type=int, default=16)
    sp.add_argument("--N", type=int, default=256)
    sp.add_argument("--tol", type=float, default=1e-8)
    common(sp, integrator=False)
    sp.set_defaults(func=cmd_relations)

    sp = sub.add_parser("poly3d", help="build a field realizing a rational polytope")
    sp.add_argument("--vertices", required=True, help='JSON {"vertices": [...], "seed": s}')
    sp.add_argument("--seed", type=int)
    sp.add_argument("--T", type=eval_number, default=1e3)
    common(sp)
    sp.set_defaults(func=cmd_poly3d)

    sp = sub.add_parser("stratified2d", help="build a stratified 2D field")
    sp.add_argument("--k", type=_floats, required=True)
    sp.add_argument("--strips", required=True, help="JSON file or inline JSON list of strips")
    sp.add_argument("--grid", type=int, default=256)
    common(sp, integrator=False)
    sp.set_defaults(func=cmd_stratified2d)

    sp = sub.add_parser("homogenize", help="weak convergence of the oscillating transport equation")
    sp.add_argument("--eps", type=_floats, default=[1 / 10, 1 / 20, 1 / 40])
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--rel-tol", type=float, default=5e-2)
    sp.add_argument("--conservation", action="store_true")
    common(sp, integrator=False)
    sp.set_defaults(func=cmd_homogenize)

    sp = sub.add_parser("lift-check", help="necessary condition for a lift to be a time-one map")
    sp.add_argument("--map", choices=["llibre-mackay", "time-one"], default="llibre-mackay")
    sp.add_argument("--field")
    sp.add_argument("--c1", type=float, default=0.25)
    sp.add_argument("--c2", type=float, default=0.25)
    sp.add_argument("--grid", type=int, default=64)
    sp.add_argument("--tol", type=float, default=1e-7)
    common(sp)
    sp.set_defaults(func=cmd_lift_check)
    return p


def run_command(argv=None):
    """Parse ``argv`` and dispatch; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except UsageError as exc:
        print(f"torusflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TorusFlowError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"torusflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        # malformed inputs are usage errors; failed verifications exit 2
        from .errors import InvalidInputError

        return EXIT_USAGE if isinstance(exc, (InvalidInputError, OSError, KeyError, json.JSONDecodeError)) else EXIT_FAIL


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
