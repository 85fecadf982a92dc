"""Command-line entry point: ``flowfilter {mesh,data,filter,sweep,compare,linearization}``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import filters, testbed
from .fem import (
    assemble_system,
    interpolate,
    read_velocity_csv,
    write_pressure_csv,
    write_velocity_csv,
)
from .mesh import generate_channel_mesh, read_mesh, write_mesh, MeshFormatError
from .solver import DEFAULT_EPSILON, DEFAULT_NU, FactorizationError, build_state_operator

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _positive_int(flag):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be an integer, got {s!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {v}")
        return v
    return conv


def _finite(flag, positive=False, nonneg=False):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be a number, got {s!r}")
        if not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"{flag} must be finite, got {s!r}")
        if positive and v <= 0:
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {v}")
        if nonneg and v < 0:
            raise argparse.ArgumentTypeError(f"{flag} must be nonnegative, got {v}")
        return v
    return conv


def _float_list(flag):
    def conv(s):
        try:
            vals = [float(t) for t in s.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be a comma-separated list of numbers")
        if not vals or not all(math.isfinite(v) for v in vals):
            raise argparse.ArgumentTypeError(f"{flag} must list finite numbers")
        return vals
    return conv


_DYADIC = re.compile(r"^\s*([0-9.eE+-]+)\s*\*\s*2\^-(\d+)\s*\.\.\s*(\d+)\s*$")


def parse_dyadic(spec: str):
    """``'a0*2^-k..K'`` -> [a0 * 2**-k, ..., a0 * 2**-K]."""
    m = _DYADIC.match(spec)
    if not m:
        raise argparse.ArgumentTypeError(f"--alphas must look like 'a0*2^-k..K', got {spec!r}")
    a0, k0, k1 = float(m.group(1)), int(m.group(2)), int(m.group(3))
    if not (math.isfinite(a0) and a0 > 0) or k1 < k0:
        raise argparse.ArgumentTypeError(f"--alphas: need a0 > 0 and k <= K, got {spec!r}")
    return [a0 * 2.0 ** (-k) for k in range(k0, k1 + 1)]


def _atomic_via(writer, path, *args):
    """Run ``writer(*args, tmp)`` on a sibling temp file, then rename it onto ``path``."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".",
                                   prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None
    os.close(fd)
    try:
        writer(*args, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    _atomic_via(lambda t, tmp: Path(tmp).write_text(t), path, text)


def _load_mesh(path):
    try:
        return read_mesh(path)
    except FileNotFoundError:
        raise UsageError(f"--mesh: no such file {path}")
    except MeshFormatError as exc:
        raise UsageError(f"--mesh: {exc}")


def _load_field(mesh, path, flag="--field"):
    try:
        return read_velocity_csv(mesh, path)
    except FileNotFoundError:
        raise UsageError(f"{flag}: no such file {path}")
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}")


def _case(args):
    return testbed.PoiseuilleCase(nu=args.nu)


def _priors(case, mesh, fstar_offset):
    pri = case.model_data(mesh)
    if fstar_offset:
        pri = testbed.misspecified_priors(mesh, pri, fstar_offset)
    return pri


# -- commands --------------------------------------------------------------------

def cmd_mesh(args):
    mesh = generate_channel_mesh(args.length, args.height, args.nx, args.ny)
    _atomic_via(write_mesh, args.out, mesh)
    print(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}")


def cmd_data(args):
    mesh = _load_mesh(args.mesh)
    if args.kind == "poiseuille":
        v = interpolate(mesh, testbed.PoiseuilleCase().velocity)
    else:
        if args.field is None:
            raise UsageError("data noise: --field is required")
        if args.delta is None:
            raise UsageError("data noise: --delta is required")
        clean = _load_field(mesh, args.field)
        v = testbed.add_noise(mesh, clean, testbed.NoiseSpec(args.delta, args.seed))
    _atomic_via(write_velocity_csv, args.out, mesh, v)


def _strip_timing(args, reports):
    # wall time breaks byte-identical reruns, so it is recorded only on request
    if not getattr(args, "timing", False):
        for r in reports:
            r.seconds = float("nan")
    return reports


def _write_outputs(args, mesh, result):
    prefix = args.out
    _strip_timing(args, [result.report])
    _atomic_via(write_velocity_csv, f"{prefix}_u.csv", mesh, result.u)
    if result.p is not None:
        _atomic_via(write_pressure_csv, f"{prefix}_p.csv", mesh, result.p)
    text = filters.reports_to_csv([result.report])
    atomic_write(f"{prefix}_report.csv", text)
    sys.stdout.write(text)


def _run_filter(method, mats, op, u_delta, priors, case, args):
    """Run one filter either at fixed --alpha or by the discrepancy principle."""
    cg = dict(tol=args.cg_tol, maxiter=args.cg_maxiter)
    if args.discrepancy:
        if args.delta is None or args.tau is None:
            raise UsageError("--discrepancy needs --delta and --tau")
        if not args.tau > 1:
            raise UsageError(f"--tau must exceed 1, got {args.tau}")
        if not args.delta > 0:
            raise UsageError(f"--delta must be positive, got {args.delta}")
        if method == "fdc":
            problem = filters.FdcProblem(op, priors, u_delta, args.alpha0)
            _, res, _ = filters.discrepancy_select(problem,
                                                   args.delta, args.tau, args.alpha0, case=case, **cg)
        else:
            _, res, _ = filters.baseline_discrepancy(method, mats, u_delta, args.delta, args.tau,
                                                     args.alpha0, case=case)
        return res
    if args.alpha is None:
        raise UsageError("either --alpha or --discrepancy is required")
    if method == "fdc":
        return filters.fdc_filter(filters.FdcProblem(op, priors, u_delta, args.alpha),
                                  case=case, **cg)
    if args.alpha < 0:
        raise UsageError(f"--alpha must be nonnegative, got {args.alpha}")
    return filters.run_baseline(method, mats, u_delta, args.alpha, case)


def cmd_filter(args):
    mesh = _load_mesh(args.mesh)
    u_delta = _load_field(mesh, args.field)
    case = _case(args)
    if args.method == "fdc" and not args.discrepancy and args.alpha is not None and args.alpha <= 0:
        raise UsageError(f"--alpha must be positive for fdc, got {args.alpha}")
    mats = assemble_system(mesh, u_delta)
    op = build_state_operator(mats, args.nu, args.epsilon) if args.method == "fdc" else None
    priors = _priors(case, mesh, args.fstar_offset) if op is not None else None
    try:
        res = _run_filter(args.method, mats, op, u_delta, priors, case, args)
    except filters.IterationLimitError as exc:
        if exc.result is not None:
            _write_outputs(args, mesh, exc.result)
        raise NumericalFailure(str(exc))
    _write_outputs(args, mesh, res)


def sweep_rows(mesh, alphas, deltas, seed, fstar_offset, nu=DEFAULT_NU, epsilon=DEFAULT_EPSILON,
               cg_tol=filters.CG_TOL, cg_maxiter=filters.CG_MAXITER, log=None):
    """Fdc runs over the (alpha, delta) grid; failed cells get nan entries."""
    case = testbed.PoiseuilleCase(nu=nu)
    clean = interpolate(mesh, case.velocity)
    priors = _priors(case, mesh, fstar_offset)
    rows = []
    for delta in deltas:
        u_delta = testbed.add_noise(mesh, clean, testbed.NoiseSpec(delta, seed))
        op = build_state_operator(assemble_system(mesh, u_delta), nu, epsilon)
        prev = None
        for alpha in alphas:
            problem = filters.FdcProblem(op, priors, u_delta, alpha)
            try:
                res = filters.fdc_filter(problem, x0=prev, case=case, tol=cg_tol, maxiter=cg_maxiter)
                prev = res.controls
                rows.append(dict(alpha=alpha, delta=delta, residual=res.report.residual_l2,
                                 err_total=res.report.err_total))
            except filters.IterationLimitError as exc:
                if log:
                    log(f"cell alpha={alpha:g} delta={delta:g} failed: {exc}")
                rows.append(dict(alpha=alpha, delta=delta, residual=float("nan"),
                                 err_total=float("nan")))
    return rows


def cmd_sweep(args):
    mesh = _load_mesh(args.mesh)
    rows = sweep_rows(mesh, args.alphas, args.deltas, args.seed, args.fstar_offset, args.nu,
                      args.epsilon, args.cg_tol, args.cg_maxiter,
                      log=lambda m: print(m, file=sys.stderr))
    atomic_write(args.out, testbed.rows_to_csv(rows, testbed.SWEEP_HEADER))


def compare_reports(mesh, delta, seed, tau, nu=DEFAULT_NU, epsilon=DEFAULT_EPSILON, alpha0=1.0,
                    cg_tol=filters.CG_TOL, cg_maxiter=filters.CG_MAXITER):
    """Smoothing, solenoidal (alpha = 0), solenoidal with smoothing and fdc on one noisy field."""
    case = testbed.PoiseuilleCase(nu=nu)
    clean = interpolate(mesh, case.velocity)
    u_delta = testbed.add_noise(mesh, clean, testbed.NoiseSpec(delta, seed))
    mats = assemble_system(mesh, u_delta)
    reports = []
    if delta > 0:
        _, r, _ = filters.baseline_discrepancy("smooth", mats, u_delta, delta, tau, alpha0, case=case)
    else:
        r = filters.run_baseline("smooth", mats, u_delta, 0.0, case)
    reports.append(r.report)
    r = filters.run_baseline("solenoidal", mats, u_delta, 0.0, case)
    r.report.method = "solenoidal-alpha0"
    reports.append(r.report)
    if delta > 0:
        _, r, _ = filters.baseline_discrepancy("solenoidal", mats, u_delta, delta, tau, alpha0,
                                               case=case)
    else:
        r = filters.run_baseline("solenoidal", mats, u_delta, 0.0, case)
    r.report.method = "solenoidal-smoothing"
    reports.append(r.report)
    op = build_state_operator(mats, nu, epsilon)
    problem = filters.FdcProblem(op, case.model_data(mesh), u_delta, alpha0)
    if delta > 0:
        _, r, _ = filters.discrepancy_select(problem, delta, tau, alpha0, case=case,
                                             tol=cg_tol, maxiter=cg_maxiter)
    else:
        r = filters.fdc_filter(problem, case=case, tol=cg_tol, maxiter=cg_maxiter)
    reports.append(r.report)
    return reports


def cmd_compare(args):
    mesh = _load_mesh(args.mesh)
    if not args.tau > 1:
        raise UsageError(f"--tau must exceed 1, got {args.tau}")
    reports = compare_reports(mesh, args.delta, args.seed, args.tau, args.nu, args.epsilon,
                              args.alpha0, args.cg_tol, args.cg_maxiter)
    _strip_timing(args, reports)
    text = filters.reports_to_csv(reports)
    atomic_write(args.out, text)
    sys.stdout.write(text)


def cmd_linearization(args):
    rows = testbed.linearization_experiment(args.ny, args.deltas, args.seed,
                                            testbed.PoiseuilleCase(nu=args.nu), args.epsilon)
    atomic_write(args.out, testbed.rows_to_csv(rows, testbed.LINEARIZATION_HEADER))


# -- parser --------------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--nu", type=_finite("--nu", positive=True), default=DEFAULT_NU)
    p.add_argument("--epsilon", type=_finite("--epsilon", positive=True), default=DEFAULT_EPSILON)


def _add_cg_flags(p):
    p.add_argument("--timing", action="store_true",
                   help="record wall time in the seconds column (otherwise nan)")
    p.add_argument("--cg-tol", type=_finite("--cg-tol", positive=True), default=filters.CG_TOL)
    p.add_argument("--cg-maxiter", type=_positive_int("--cg-maxiter"), default=filters.CG_MAXITER)
    p.add_argument("--alpha0", type=_finite("--alpha0", positive=True), default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowfilter",
                                     description="Denoise channel-flow velocity data with a "
                                                 "linearized flow model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a channel triangulation")
    p.add_argument("--length", type=_finite("--length", positive=True), default=5.0)
    p.add_argument("--height", type=_finite("--height", positive=True), default=1.0)
    p.add_argument("--nx", type=_positive_int("--nx"), required=True)
    p.add_argument("--ny", type=_positive_int("--ny"), required=True)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("data", help="write exact or noisy velocity data")
    p.add_argument("kind", choices=["poiseuille", "noise"])
    p.add_argument("--mesh", required=True)
    p.add_argument("--field")
    p.add_argument("--delta", type=_finite("--delta", nonneg=True))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_data)

    p = sub.add_parser("filter", help="reconstruct a velocity field")
    p.add_argument("--mesh", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--method", choices=["smooth", "solenoidal", "fdc"], required=True)
    p.add_argument("--alpha", type=_finite("--alpha"))
    p.add_argument("--discrepancy", action="store_true")
    p.add_argument("--tau", type=_finite("--tau"))
    p.add_argument("--delta", type=_finite("--delta"))
    p.add_argument("--fstar-offset", type=_finite("--fstar-offset", nonneg=True), default=0.0)
    p.add_argument("--seed", type=int, default=0, help="recorded only; filters are deterministic")
    p.add_argument("-o", "--out", required=True, help="output prefix")
    _add_model_flags(p)
    _add_cg_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sweep", help="fdc runs over an (alpha, delta) grid")
    p.add_argument("--mesh", required=True)
    p.add_argument("--alphas", type=parse_dyadic, required=True)
    p.add_argument("--deltas", type=_float_list("--deltas"), required=True)
    p.add_argument("--fstar-offset", type=_finite("--fstar-offset", nonneg=True), default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    _add_model_flags(p)
    _add_cg_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="four-filter comparison at one noise level")
    p.add_argument("--mesh", required=True)
    p.add_argument("--delta", type=_finite("--delta", nonneg=True), required=True)
    p.add_argument("--tau", type=_finite("--tau"), default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    _add_model_flags(p)
    _add_cg_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("linearization", help="linearization error on a mesh ladder")
    p.add_argument("--ny", type=lambda s: [int(v) for v in s.split(",")], default=[8, 16, 32, 64])
    p.add_argument("--deltas", type=_float_list("--deltas"), default=[0.4, 0.2, 0.1, 0.05, 0.025])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_linearization)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        args.func(args)
    except UsageError as exc:
        print(f"flowfilter {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"flowfilter {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, FactorizationError, filters.NoAdmissibleAlphaError) as exc:
        print(f"flowfilter {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
