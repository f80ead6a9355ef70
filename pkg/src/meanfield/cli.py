"""Command-line entry point.

Every subcommand prints one JSON object on stdout and writes its CSV or
binary artifacts into ``--output-dir`` when one is given.  Densities are
entered in units of pi (``--rho1-over-pi 12`` means 12 pi).  A flat
``key = value`` file passed with ``--config`` supplies defaults, and flags
given on the command line win.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import bubbles, functional, mass_algebra, radial, solver, torus, transport

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

NUMERIC_FAILURES = (
    radial.StepFailure, radial.Overflow,
    solver.Diverged, solver.SingularJacobian, solver.PathStuck,
)


class ValidationError(ValueError):
    pass


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def emit(obj):
    print(json.dumps(_jsonable(obj), sort_keys=True))


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _output_dir(args):
    d = getattr(args, "output_dir", None)
    if d:
        os.makedirs(d, exist_ok=True)
    return d


def _rho(args):
    r1, r2 = args.rho1_over_pi * math.pi, args.rho2_over_pi * math.pi
    return r1, r2


# -- subcommands ------------------------------------------------------------

def cmd_masses(args):
    a = mass_algebra.check_a(args.a) if args.a is not None else None
    out = {}
    if a is not None:
        out.update(
            a=a,
            threshold_beta=mass_algebra.threshold_beta(a),
            min_mass_rho2_over_pi=mass_algebra.min_mass_rho2(a) / math.pi,
            eta_interval=list(mass_algebra.admissible_eta_interval(a)),
        )
    if args.gamma_m is not None:
        if a is None:
            raise ValidationError("--gamma-m needs --a")
        if args.gamma_m < 1:
            raise ValidationError("m must be at least 1")
        roots, mult = mass_algebra.solve_gamma_m(args.gamma_m, a, return_multiplicity=True)
        out["gamma_m"] = {
            "m": args.gamma_m,
            "roots": roots,
            "multiplicity": mult,
            "admissible": mass_algebra.admissible_gamma_m(args.gamma_m, a),
            "discriminant": mass_algebra.gamma_m_discriminant(args.gamma_m, a),
        }
    if args.classify is not None:
        if a is None:
            raise ValidationError("--classify needs --a")
        if len(args.classify) != 2:
            raise ValidationError("--classify takes sigma1,sigma2")
        mp = mass_algebra.MassPair(*args.classify)
        bt = mass_algebra.classify_local_mass(mp, a, args.tol)
        out["classification"] = {"type": bt.kind, "label": str(bt),
                                 "pohozaev_residual": mass_algebra.pohozaev_residual(mp, a)}
    if args.atoms is not None:
        P = mass_algebra.AtomicIntensity.parse(args.atoms)
        val = mass_algebra.sharp_threshold(P)
        out["sharp_threshold"] = val
        out["sharp_threshold_over_pi"] = val / math.pi
    if args.rho1_over_pi is not None and args.rho2_over_pi is not None:
        if a is None:
            raise ValidationError("coercivity check needs --a")
        out["coercive"] = mass_algebra.coercive_region(_rho(args), a)
    if not out:
        raise ValidationError("nothing to compute; give --a and a query")
    emit(out)
    return EXIT_OK


def _shoot_params(args):
    return radial.ShootParams(rho1=args.rho1, rho2=args.rho2, a=args.a, c0=args.c0, v0=args.v0,
                              r_max=args.r_max, rtol=args.rtol, atol=args.atol).validate()


def cmd_shoot(args):
    p = _shoot_params(args)
    lo, hi = args.fit_window
    if not 1 < lo < hi <= p.r_max:
        raise ValidationError("fit window must satisfy 1 < lo < hi <= r_max")
    out_dir = _output_dir(args)
    prof = radial.shoot(p)
    eta, s1, s2 = prof.at_end()
    try:
        lm, status = radial.limit_mass(prof, (lo, hi)), "converged"
    except radial.NonConverged as exc:
        lm, status = math.nan, f"nonconverged: {exc}"
    if out_dir:
        prof.to_csv(os.path.join(out_dir, "profile.csv"))
    emit(dict(eta=eta, sigma1=s1, sigma2=s2, limit_mass=lm, status=status,
              pohozaev_residual=radial.verify_pohozaev(prof),
              eta_interval=list(mass_algebra.admissible_eta_interval(p.a))))
    return EXIT_OK


def cmd_sweep(args):
    mass_algebra.check_a(args.a)
    radial.ShootParams(rho1=1, rho2=1, a=args.a, r_max=args.r_max, rtol=args.rtol, atol=args.atol).validate()
    if not args.c0 or not args.ratios:
        raise ValidationError("c0 and ratio grids must be nonempty")
    out_dir = _output_dir(args)
    rows = radial.sweep_eta(args.a, args.c0, args.ratios, r_max=args.r_max, rtol=args.rtol, atol=args.atol)
    if out_dir:
        radial.write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
    counts = {}
    for r in rows:
        counts[r["status"]] = counts.get(r["status"], 0) + 1
    conv = [r for r in rows if r["status"] == "converged"]
    emit(dict(a=args.a, counts=counts, eta_interval=list(mass_algebra.admissible_eta_interval(args.a)),
              max_pohozaev_residual=max((r["pohozaev_residual"] for r in conv), default=math.nan),
              eta=[r["eta"] for r in rows]))
    return EXIT_NUMERIC if counts.get("interval_violation") else EXIT_OK


def _ladder(args):
    lams = args.lambdas or bubbles.geometric_ladder()
    if min(lams) <= 1 or any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValidationError("lambdas must be increasing and exceed 1")
    n = args.n or bubbles.grid_for(max(lams)).n
    grid = torus.TorusGrid(n)
    if max(lams) > n / 4:
        raise ValidationError(f"lambda={max(lams):g} is not resolved on n={n} (need lambda <= n/4)")
    return lams, grid


def cmd_bubble(args):
    mass_algebra.check_a(args.a)
    lams, grid = _ladder(args)
    sigma = torus.Barycenter.uniform(functional.spread_atoms(args.k))
    rho = _rho(args)
    out_dir = _output_dir(args)
    rows = bubbles.bubble_ladder(sigma, grid, lams, a=args.a, rho=rho)
    fit = lambda key: functional.fit_log_slope(lams, [r[key] for r in rows])  # noqa: E731
    if out_dir:
        bubbles.write_ladder_csv(rows, os.path.join(out_dir, "ladder.csv"))
    slope = fit("J_total")
    emit(dict(k=args.k, n=grid.n, energy_coefficient_over_pi=fit("energy") / math.pi,
              log_int_coefficient=fit("log_int"), avg_coefficient=fit("avg"),
              J_slope=slope, J_slope_over_pi=slope / math.pi,
              expected_J_slope_over_pi=functional.expected_family_slope(args.k, rho[0]) / math.pi))
    return EXIT_OK


def cmd_mtcheck(args):
    mass_algebra.check_a(args.a)
    lams, grid = _ladder(args)
    if args.k < 1:
        raise ValidationError("k must be at least 1")
    functional.spread_atoms(args.k + 1)
    rho1, rho2 = _rho(args)
    out_dir = _output_dir(args)
    slope, rows = functional.improved_mt_family_test(args.k, rho1, args.a, rho2, lams, n=grid.n, return_rows=True)
    if out_dir:
        functional.write_family_csv(rows, os.path.join(out_dir, "family.csv"))
    expected = functional.expected_family_slope(args.k + 1, rho1)
    emit(dict(k=args.k, slope=slope, slope_over_pi=slope / math.pi,
              expected_over_pi=expected / math.pi, sign_matches=bool(np.sign(slope) == np.sign(expected))))
    return EXIT_OK


def _weights(args, n):
    X, _ = torus.TorusGrid(n).mesh()
    if not 0 <= args.h1_amp < 1:
        raise ValidationError("h1 amplitude must lie in [0, 1)")
    return functional.Weights(1.0 + args.h1_amp * np.cos(2 * np.pi * X), 1.0)


def _initial(args, n):
    if args.init_noise == 0:
        return None
    rng = np.random.default_rng(args.seed)
    u = args.init_noise * rng.standard_normal((n, n))
    # smooth the noise so Newton starts from a resolved field
    u = torus.inverse_laplacian(u)
    u *= args.init_noise / max(np.abs(u).max(), 1e-300)
    return u - u.mean()


def _solve_config(args, rho, path=()):
    return solver.SolveConfig(rho=rho, a=args.a, n=args.n, h=_weights(args, args.n),
                              max_iter=args.max_iter, residual_tol=args.residual_tol,
                              path=list(path), step=args.step_over_pi * math.pi if hasattr(args, "step_over_pi") else math.pi,
                              allow_outside=getattr(args, "allow_outside", False))


def cmd_solve(args):
    if args.coercive_demo:
        args.rho1_over_pi, args.rho2_over_pi, args.a, args.h1_amp = 4.0, 2.0, 0.25, 0.5
    cfg = _solve_config(args, _rho(args))
    if not 2.0 / cfg.n < args.ball_radius < 0.25:
        raise ValidationError("ball radius must lie in (2/n, 0.25)")
    u0 = _initial(args, cfg.n)
    out_dir = _output_dir(args)
    rec = solver.newton_solve(cfg, u0)
    report = solver.blowup_diagnostics(rec, args.ball_radius)
    if out_dir:
        solver.save_run(out_dir, cfg, rec, report, extra={"seed": str(args.seed), "h1_amp": repr(args.h1_amp)})
    emit(dict(residual_norm=rec.residual_norm, iterations=rec.iterations, J_total=rec.J_value.total,
              sup_norm=report.sup_norm, peaks=len(report.peak_set),
              coercive=mass_algebra.coercive_region(cfg.rho, cfg.a)))
    return EXIT_OK


def _path(text):
    pts = []
    for item in text.split(","):
        r1, _, r2 = item.partition(":")
        try:
            pts.append((float(r1) * math.pi, float(r2) * math.pi))
        except ValueError as exc:
            raise ValidationError(f"bad path point {item!r}; expected rho1:rho2 in units of pi") from exc
    return pts


def cmd_continue(args):
    path = _path(args.path)
    cfg = _solve_config(args, path[0], path)
    if not all(solver.inside_existence_region(p, cfg.a) for p in cfg.path) and not cfg.allow_outside:
        raise ValidationError("path leaves the existence region; pass --allow-outside")
    out_dir = _output_dir(args)
    stuck = None
    try:
        records = solver.continuation_run(cfg)
    except solver.PathStuck as exc:
        records, stuck = exc.records, str(exc)
    if out_dir:
        import csv

        with open(os.path.join(out_dir, "continuation.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho1_over_pi", "rho2_over_pi", "residual_norm", "iterations", "sup_norm", "J_total"])
            for r in records:
                w.writerow([repr(r.rho.rho1 / math.pi), repr(r.rho.rho2 / math.pi), repr(r.residual_norm),
                            r.iterations, repr(float(np.abs(r.u).max())), repr(r.J_value.total)])
        if records:
            solver.save_run(out_dir, cfg.with_rho(records[-1].rho), records[-1])
    emit(dict(states=len(records), stuck=stuck,
              last_rho_over_pi=[records[-1].rho.rho1 / math.pi, records[-1].rho.rho2 / math.pi] if records else None,
              last_sup_norm=float(np.abs(records[-1].u).max()) if records else None))
    return EXIT_NUMERIC if stuck else EXIT_OK


def cmd_diagnose(args):
    mass_algebra.check_a(args.a)
    rho = mass_algebra.RhoPair(*_rho(args))
    if not os.path.exists(args.field):
        raise ValidationError(f"no such field file {args.field}")
    u = torus.read_field_binary(args.field)
    n = u.shape[0]
    args.n = n
    h = _weights(args, n)
    u = u - u.mean()
    rec = solver.SolutionRecord(u, float(np.abs(functional.el_residual(u, rho, args.a, h)).max()), rho, 0,
                                functional.evaluate_J(u, rho, args.a, h), args.a, h, status="loaded")
    if not 2.0 / n < args.ball_radius < 0.25:
        raise ValidationError("ball radius must lie in (2/n, 0.25)")
    out_dir = _output_dir(args)
    report = solver.blowup_diagnostics(rec, args.ball_radius)
    types = solver.classify_blowup(report, args.a, args.tol)
    if out_dir:
        solver.write_diagnostics_csv(report, os.path.join(out_dir, "diagnostics.csv"))
    out = dict(peaks=report.peak_set, local_masses_over_2pi=[[m / (2 * math.pi) for m in p] for p in report.local_masses],
               residual_masses=report.residual_masses, sup_norm=report.sup_norm,
               selection_bound=report.selection_bound, types=[str(t) for t in types],
               r1_flag=solver.r1_flag(report) or None)
    if args.k:
        mu = torus.density(np.exp(u - u.max()))
        d, nu = transport.dist_to_barycenters(mu, args.k)
        out["dist_to_barycenters"] = d
        out["barycenter"] = dict(points=nu.points, weights=nu.weights)
    emit(out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _rho_args(p, rho1=None, rho2=None):
    p.add_argument("--rho1-over-pi", type=float, default=rho1)
    p.add_argument("--rho2-over-pi", type=float, default=rho2)


def _solver_args(p):
    p.add_argument("--a", type=float, default=0.25)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--h1-amp", type=float, default=0.0, help="h1 = 1 + amp cos(2 pi x)")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--residual-tol", type=float, default=1e-10)


def _ladder_args(p):
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--a", type=float, default=0.25)
    p.add_argument("--lambdas", type=_floats, default=None)
    p.add_argument("--n", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None, help="flat key = value file of defaults")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("masses", cmd_masses, "mass algebra queries")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--gamma-m", type=int, default=None)
    p.add_argument("--classify", type=_floats, default=None, metavar="S1,S2")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--atoms", default=None, metavar="ALPHA:W,...")
    _rho_args(p)

    for name, func in (("shoot", cmd_shoot), ("sweep", cmd_sweep)):
        p = add(name, func, "radial shooting" if name == "shoot" else "radial sweep over (c0, rho2/rho1)")
        p.add_argument("--a", type=float, default=0.5)
        p.add_argument("--r-max", type=float, default=1e4)
        p.add_argument("--rtol", type=float, default=1e-10)
        p.add_argument("--atol", type=float, default=1e-12)
        if name == "shoot":
            p.add_argument("--rho1", type=float, default=1.0)
            p.add_argument("--rho2", type=float, default=0.0)
            p.add_argument("--c0", type=float, default=0.0)
            p.add_argument("--v0", type=float, default=0.0)
            p.add_argument("--fit-window", type=_floats, default=[1e3, 1e4])
        else:
            p.add_argument("--c0", type=_floats, default=[-1.0, -0.5, 0.0, 0.5, 1.0])
            p.add_argument("--ratios", type=_floats, default=[0.25, 0.5, 1.0, 2.0, 4.0])

    p = add("bubble", cmd_bubble, "bubble ladder fits")
    _ladder_args(p)
    _rho_args(p, 12.0, 0.0)

    p = add("mtcheck", cmd_mtcheck, "improved Moser-Trudinger family test")
    _ladder_args(p)
    _rho_args(p, 20.0, 0.0)

    p = add("solve", cmd_solve, "Newton solve of the mean field equation")
    _solver_args(p)
    _rho_args(p, 4.0, 2.0)
    p.add_argument("--init-noise", type=float, default=0.0)
    p.add_argument("--ball-radius", type=float, default=0.1)
    p.add_argument("--coercive-demo", type=_bool, nargs="?", const=True, default=False)

    p = add("continue", cmd_continue, "continuation along a rho path")
    _solver_args(p)
    p.add_argument("--path", required=False, default="2:1,12:1", help="rho1:rho2 points in units of pi")
    p.add_argument("--step-over-pi", type=float, default=1.0)
    p.add_argument("--allow-outside", type=_bool, nargs="?", const=True, default=False)

    p = add("diagnose", cmd_diagnose, "blow-up diagnostics on a stored field")
    p.add_argument("--field", required=False, default=None)
    p.add_argument("--a", type=float, default=0.25)
    _rho_args(p, 8.0, 2.0)
    p.add_argument("--h1-amp", type=float, default=0.0)
    p.add_argument("--ball-radius", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--k", type=int, default=0, help="also report distance to k-point barycenters")
    return parser


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        # argparse converts string defaults with each option's type
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.command == "diagnose" and not args.field:
        raise ValidationError("--field is required")
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERIC_FAILURES as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
