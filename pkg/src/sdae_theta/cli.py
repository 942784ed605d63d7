"""Command-line front end.

Subcommands::

    convergence   Monte Carlo strong-error ladder, CSV report
    simulate      integrate one path, CSV trajectory
    check         problem self-checks (projectors, Jacobian, feasibility, probes)
    fit           least-squares order fit from an existing report CSV
    diagnose      moment and Hoelder-continuity diagnostics, CSV

Exit codes: 0 success, 1 usage error, 2 failed paths or failed checks.
"""

from __future__ import annotations

import argparse
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import experiment
from .experiment import (
    ConvergenceConfig,
    default_workers,
    diagnostics,
    diagnostics_to_csv,
    fit_slope,
    read_report_csv,
    run_convergence,
    write_report_csv,
)
from .newton import NewtonConfig
from .paths import generate
from .problems import (
    BUILTIN_LABELS,
    SdaeProblem,
    builtin,
    check_initial_consistency,
    index1_jacobian_norm,
    jacobian_fd_error,
    probe_assumptions,
)
from .linalg import projectors
from .stepper import ThetaConfig, integrate, stepsize_guard, write_trajectory_csv


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise _UsageError(message)


def _parse_thetas(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise _UsageError(f"bad theta list: {text!r}")
    if not values:
        raise _UsageError("empty theta list")
    return values


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise _UsageError(f"bad level ladder: {text!r} (use e.g. 6..11)")


def _resolve_problem(label: str) -> SdaeProblem:
    try:
        return builtin(label)
    except KeyError:
        raise _UsageError(
            f"unknown problem {label!r}; valid labels: {', '.join(BUILTIN_LABELS)}"
        )


def _build_parser() -> _Parser:
    parser = _Parser(prog="sdae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="strong-error ladder and order fit")
    conv.add_argument("--problem", required=True)
    conv.add_argument("--thetas", default="0.5,0.75,1.0")
    conv.add_argument("--ref-level", type=int, default=13)
    conv.add_argument("--levels", default="6..11")
    conv.add_argument("--paths", type=int, default=1000)
    conv.add_argument("--seed", type=int, default=1)
    conv.add_argument("--measure", choices=["terminal", "max"], default="terminal")
    conv.add_argument("--newton-tol", type=float, default=1e-5)
    conv.add_argument("--workers", type=int, default=None)
    conv.add_argument("--out", default=None)

    sim = sub.add_parser("simulate", help="integrate a single path")
    sim.add_argument("--problem", required=True)
    sim.add_argument("--theta", type=float, default=1.0)
    sim.add_argument("--level", type=int, default=10)
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--newton-tol", type=float, default=1e-5)
    sim.add_argument("--no-noise", action="store_true", help="zero Brownian increments")
    sim.add_argument("--out", default=None)

    chk = sub.add_parser("check", help="run problem self-checks")
    chk.add_argument("--problem", required=True)

    fit = sub.add_parser("fit", help="fit slopes from a report CSV")
    fit.add_argument("--in", dest="infile", required=True)

    diag = sub.add_parser("diagnose", help="moment and Hoelder diagnostics")
    diag.add_argument("--problem", required=True)
    diag.add_argument("--theta", type=float, default=1.0)
    diag.add_argument("--level", type=int, default=10)
    diag.add_argument("--paths", type=int, default=200)
    diag.add_argument("--seed", type=int, default=1)
    diag.add_argument("--p", type=float, default=4.0)
    diag.add_argument("--out", default=None)
    return parser


def _cmd_convergence(args) -> int:
    _resolve_problem(args.problem)  # label validation with a usage error
    measure = "max_grid" if args.measure == "max" else "terminal"
    cfg = ConvergenceConfig(
        problem_label=args.problem,
        thetas=_parse_thetas(args.thetas),
        ref_level=args.ref_level,
        coarse_levels=_parse_levels(args.levels),
        n_paths=args.paths,
        seed=args.seed,
        measure_at=measure,
        newton=NewtonConfig(tol=args.newton_tol),
        workers=args.workers if args.workers is not None else default_workers(),
    )
    try:
        report = run_convergence(cfg)
    except (ValueError, experiment.ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or f"{args.problem}_convergence.csv"
    write_report_csv(report, out)
    n_failed = 0
    for s in report.series:
        n_failed += sum(p.n_failed for p in s.points)
        print(f"theta={s.theta:g} slope={s.slope:.4f} intercept={s.intercept:.4f}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"max constraint residual: {report.max_constraint_residual:.3e}")
    print(f"wrote {out}")
    if n_failed:
        print(f"warning: {n_failed} failed path runs", file=sys.stderr)
        return 2
    return 0


def _cmd_simulate(args) -> int:
    prob = _resolve_problem(args.problem)
    k_steps = round(prob.horizon * 2**args.level)
    delta = prob.horizon / k_steps
    if args.no_noise:
        increments = np.zeros((k_steps, prob.m))
    else:
        increments = generate(
            args.seed, prob.m, args.level, prob.horizon, stream=0
        ).increments
    cfg = ThetaConfig(
        theta=args.theta, delta=delta, newton=NewtonConfig(tol=args.newton_tol)
    )
    traj = integrate(prob, cfg, increments)
    out = args.out or f"{args.problem}_trajectory.csv"
    write_trajectory_csv(traj, out)
    print(f"wrote {out} ({traj.states.shape[0]} nodes)")
    if traj.failure_index is not None:
        print(f"step {traj.failure_index} failed; trajectory truncated", file=sys.stderr)
        return 2
    print(
        f"terminal state: {np.array2string(traj.terminal, precision=6)}  "
        f"max |R F|: {float(np.max(traj.constraint_residuals)):.3e}"
    )
    return 0


def run_check(prob: SdaeProblem, emit=print) -> int:
    """All problem self-checks; returns the process exit code (0 or 2)."""
    failures = 0

    def ok(name: str, passed: bool, detail: str = ""):
        nonlocal failures
        tag = "ok" if passed else "FAIL"
        emit(f"[{tag:>4}] {name}" + (f": {detail}" if detail else ""))
        if not passed:
            failures += 1

    def warn(name: str, detail: str):
        emit(f"[warn] {name}: {detail}")

    # Pseudo-inverse and projector identities along the time grid.
    worst = 0.0
    norm_ok = True
    c = prob.constants
    for t in np.linspace(0.0, prob.horizon, 50):
        b = projectors(prob.a_of_t(float(t)))
        a = b.a
        scale = 1.0 + np.linalg.norm(a)
        eye = np.eye(prob.d)
        residues = [
            a @ b.a_pinv @ a - a,
            b.a_pinv @ a @ b.a_pinv - b.a_pinv,
            (a @ b.a_pinv).T - a @ b.a_pinv,
            (b.a_pinv @ a).T - b.a_pinv @ a,
            b.p @ b.p - b.p,
            b.r_proj @ b.r_proj - b.r_proj,
            a @ b.q,
            b.r_proj @ a,
            b.p + b.q - eye,
            a @ b.a_pinv + b.r_proj - eye,
        ]
        worst = max(worst, max(np.linalg.norm(r) / scale for r in residues))
        d = prob.d
        if np.linalg.norm(a) > math.sqrt(c.rank_r) * d * c.sigma_hi + 1e-9:
            norm_ok = False
        if np.linalg.norm(b.a_pinv) > math.sqrt(c.rank_r) * d / c.sigma_lo + 1e-9:
            norm_ok = False
    ok("pseudo-inverse and projector identities", worst <= 1e-10, f"max residue {worst:.2e}")
    ok("constraint-matrix norm bounds", norm_ok)

    fd = jacobian_fd_error(prob, n_samples=100, seed=7)
    ok("drift Jacobian vs central differences", fd <= 1e-6, f"max rel err {fd:.2e}")

    feasible, resid = check_initial_consistency(prob, tol=1e-12)
    ok("initial consistency R F(0, x0) = 0", feasible, f"residual {resid:.2e}")

    if c.jacobian_bound_lj is not None:
        rng = np.random.default_rng(11)
        worst_j = 0.0
        for _ in range(50):
            t = float(rng.uniform(0.0, prob.horizon))
            x = rng.uniform(-2.0, 2.0, size=prob.d)
            worst_j = max(worst_j, index1_jacobian_norm(prob, t, x))
        ok(
            "index-1 Jacobian inverse bound",
            worst_j <= c.jacobian_bound_lj + 1e-9,
            f"sampled max {worst_j:.3f} <= declared {c.jacobian_bound_lj:.3f}",
        )
    else:
        warn("index-1 Jacobian inverse bound", "no bound declared (degenerate constraint row); skipped")

    radii = [1.0, 2.0, 4.0, 8.0]
    l1_hats = []
    l2_hats = []
    for r in radii:
        probe = probe_assumptions(prob, n_samples=800, box_radius=r, seed=3)
        l1_hats.append(probe.l1_hat)
        l2_hats.append(probe.l2_hat)
    emit(
        "[info] one-sided monotonicity probe: "
        + ", ".join(f"r={r:g}: {v:.3g}" for r, v in zip(radii, l1_hats))
        + f"  (declared L1 = {c.monotonicity_l1:g})"
    )
    if max(l1_hats) > c.monotonicity_l1 + 1e-6:
        ok(
            "monotonicity probe vs declared constant",
            False,
            f"sampled {max(l1_hats):.3g} exceeds declared {c.monotonicity_l1:g}",
        )
    else:
        ok("monotonicity probe vs declared constant", True)
    grows = l2_hats[-1] > 4.0 * max(l2_hats[0], 1e-12) and l2_hats[-1] > 1.0
    if grows:
        warn(
            "coupled one-sided probe",
            "grows with the sample radius (appears unbounded); "
            "only the constant-constraint-matrix convergence route applies",
        )
    elif c.coupling_l2 is not None and max(l2_hats) > c.coupling_l2 + 1e-6:
        warn(
            "coupled one-sided probe",
            f"sampled {max(l2_hats):.3g} exceeds declared L2 = {c.coupling_l2:g}",
        )
    else:
        emit(
            "[info] coupled one-sided probe: "
            + ", ".join(f"r={r:g}: {v:.3g}" for r, v in zip(radii, l2_hats))
        )

    for theta in (0.5, 0.75, 1.0):
        for level in range(6, 14):
            delta = prob.horizon / round(prob.horizon * 2**level)
            guard = stepsize_guard(c, theta, delta)
            if not guard.ok:
                warn(f"stepsize guard (theta={theta:g}, delta=2^-{level})", guard.message)

    emit("all checks passed" if failures == 0 else f"{failures} check(s) failed")
    return 0 if failures == 0 else 2


def _cmd_check(args) -> int:
    prob = _resolve_problem(args.problem)
    return run_check(prob)


def _cmd_fit(args) -> int:
    try:
        parsed = read_report_csv(args.infile)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not parsed.points:
        print("error: no data rows in report", file=sys.stderr)
        return 1
    for theta in sorted(parsed.points):
        pts = [(delta, rms) for (_lvl, delta, rms, _n, _f, _s) in parsed.points[theta]]
        try:
            slope, intercept = fit_slope(pts)
        except ValueError as exc:
            print(f"error: theta={theta:g}: {exc}", file=sys.stderr)
            return 1
        print(f"theta={theta:g} slope={slope:.17g} intercept={intercept:.17g}")
    return 0


def _cmd_diagnose(args) -> int:
    prob = _resolve_problem(args.problem)
    try:
        report = diagnostics(
            prob, args.theta, args.level, args.paths, args.seed, p=args.p
        )
    except (ValueError, experiment.ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or f"{args.problem}_diagnostics.csv"
    with open(out, "w") as fh:
        fh.write(diagnostics_to_csv(report))
    print(
        f"holder slope: {report.holder_slope:.4f}  "
        f"max moment: {float(np.max(report.moments)):.6g}"
    )
    print(f"wrote {out}")
    if report.n_failed:
        print(f"warning: {report.n_failed} failed paths", file=sys.stderr)
        return 2
    return 0


_COMMANDS = {
    "convergence": _cmd_convergence,
    "simulate": _cmd_simulate,
    "check": _cmd_check,
    "fit": _cmd_fit,
    "diagnose": _cmd_diagnose,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
