"""Monte Carlo strong-error estimation, order fitting, statistical diagnostics.

For each path, reference and coarse solutions are driven by the *same*
Brownian lattice (path ``i`` is the Philox stream ``(seed, i)``), with
coarse increments obtained by exact dyadic summation; the pathwise error
is either the terminal-state distance (default) or the max over the shared
grid nodes.  The root-mean-square error at a level is the square root of
the Monte Carlo mean of squared errors over the successful paths; failed
paths are counted and reported, never silently dropped.

Paths are processed in fixed chunks of :data:`CHUNK` and reduced in path
order, so results are bitwise independent of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .inherent import integrate_inherent_ensemble
from .newton import NewtonConfig
from .paths import GENERATOR_ID, coarsen_array, generate
from .problems import SdaeProblem, builtin
from .stepper import GridData, ThetaConfig, integrate_ensemble

CHUNK = 256

WORKERS_ENV = "SDAE_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvergenceConfig:
    problem_label: str
    thetas: tuple[float, ...] = (0.5, 0.75, 1.0)
    ref_level: int = 13
    coarse_levels: tuple[int, ...] = (6, 7, 8, 9, 10, 11)
    n_paths: int = 1000
    seed: int = 1
    measure_at: str = "terminal"
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    precondition: bool = True
    constraint_check_tol: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        if not self.coarse_levels:
            raise ValueError("need at least one coarse level")
        if self.ref_level <= max(self.coarse_levels):
            raise ValueError("ref_level must exceed every coarse level")
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.measure_at not in ("terminal", "max_grid"):
            raise ValueError("measure_at must be 'terminal' or 'max_grid'")
        if any(t < 0.5 or t > 1.0 for t in self.thetas):
            raise ValueError("thetas must lie in [1/2, 1]")


@dataclass(frozen=True)
class LevelPoint:
    level: int
    delta: float
    rms: float
    n_failed: int


@dataclass(frozen=True)
class ThetaSeries:
    theta: float
    points: tuple[LevelPoint, ...]
    slope: float
    intercept: float


PROVEN_MS_ORDER = 0.5


@dataclass(frozen=True)
class ConvergenceReport:
    problem_label: str
    seed: int
    n_paths: int
    measure_at: str
    generator_id: str
    created_at: str
    series: tuple[ThetaSeries, ...]
    max_constraint_residual: float
    notes: tuple[str, ...] = ()


# Per-process cache of grid matrices, keyed by problem label and grid shape.
_GRID_CACHE: dict[tuple, GridData] = {}


def _grid_for(prob: SdaeProblem, delta: float, n_steps: int) -> GridData:
    key = (prob.label, prob.d, delta, n_steps)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = GridData(prob, delta, n_steps)
        _GRID_CACHE[key] = grid
    return grid


def _fine_increments(prob: SdaeProblem, seed: int, ref_level: int, lo: int, hi: int) -> np.ndarray:
    rows = [
        generate(seed, prob.m, ref_level, prob.horizon, stream=i).increments
        for i in range(lo, hi)
    ]
    return np.stack(rows)


def _pathwise_errors(
    ref_states: np.ndarray, coarse_states: np.ndarray, measure_at: str
) -> np.ndarray:
    """Per-path error between recorded reference and coarse states.

    Both arrays have shape ``(n, R, d)`` on the same shared nodes (for
    ``terminal`` R == 1).
    """
    diff = ref_states - coarse_states
    norms = np.sqrt(np.sum(diff * diff, axis=-1))  # (n, R)
    if measure_at == "terminal":
        return norms[:, -1]
    return np.max(norms, axis=-1)


@dataclass(frozen=True)
class _ChunkTask:
    prob: SdaeProblem
    theta: float
    ref_level: int
    levels: tuple[int, ...]
    seed: int
    lo: int
    hi: int
    measure_at: str
    newton: NewtonConfig
    precondition: bool
    constraint_check_tol: float
    compare_inherent: bool = False


@dataclass(frozen=True)
class _ChunkResult:
    # arrays indexed [level_position][path_in_chunk]
    sq_errors: np.ndarray   # (n_levels, chunk)
    failed: np.ndarray      # (n_levels, chunk) bool
    max_constraint: float
    # only for compare_inherent tasks: coupled-vs-inherent squared gaps
    sq_gap: Optional[np.ndarray] = None       # (n_levels, chunk)
    sq_inherent: Optional[np.ndarray] = None  # (n_levels, chunk)


def _run_chunk(task: _ChunkTask) -> _ChunkResult:
    prob = task.prob
    k_ref = round(prob.horizon * 2**task.ref_level)
    fine = _fine_increments(prob, task.seed, task.ref_level, task.lo, task.hi)
    delta_ref = prob.horizon / k_ref

    max_coarse = max(task.levels)
    if task.measure_at == "max_grid":
        stride = 2 ** (task.ref_level - max_coarse)
        ref_nodes = list(range(0, k_ref + 1, stride))
    else:
        ref_nodes = [k_ref]

    cfg_ref = ThetaConfig(
        theta=task.theta,
        delta=delta_ref,
        newton=task.newton,
        precondition=task.precondition,
        constraint_check_tol=task.constraint_check_tol,
    )
    ref = integrate_ensemble(
        prob,
        cfg_ref,
        fine,
        record_nodes=ref_nodes,
        grid=_grid_for(prob, delta_ref, k_ref),
    )
    max_c = float(np.max(ref.max_constraint_residual))

    n_chunk = task.hi - task.lo
    sq = np.zeros((len(task.levels), n_chunk))
    failed = np.zeros((len(task.levels), n_chunk), dtype=bool)
    sq_gap = np.zeros_like(sq) if task.compare_inherent else None
    sq_inh = np.zeros_like(sq) if task.compare_inherent else None

    for pos, level in enumerate(task.levels):
        k_coarse = round(prob.horizon * 2**level)
        delta = prob.horizon / k_coarse
        inc = coarsen_array(fine, task.ref_level - level)
        if task.measure_at == "max_grid":
            coarse_nodes = list(range(0, k_coarse + 1))
            pick = list(range(0, k_ref + 1, 2 ** (task.ref_level - max_coarse)))
            ref_stride = 2 ** (max_coarse - level)
            ref_sel = np.arange(0, len(pick), ref_stride)
        else:
            coarse_nodes = [k_coarse]
            ref_sel = np.array([-1])
        cfg = ThetaConfig(
            theta=task.theta,
            delta=delta,
            newton=task.newton,
            precondition=task.precondition,
            constraint_check_tol=task.constraint_check_tol,
        )
        out = integrate_ensemble(
            prob,
            cfg,
            inc,
            record_nodes=coarse_nodes,
            grid=_grid_for(prob, delta, k_coarse),
        )
        max_c = max(max_c, float(np.max(out.max_constraint_residual)))
        ref_states = ref.states[:, ref_sel, :] if task.measure_at == "max_grid" else ref.states
        err = _pathwise_errors(ref_states, out.states, task.measure_at)
        bad = ref.failed | out.failed
        err = np.where(bad, 0.0, err)
        sq[pos] = err * err
        failed[pos] = bad
        if task.compare_inherent:
            inh = integrate_inherent_ensemble(
                prob, cfg, inc, record_nodes=coarse_nodes
            )
            max_c = max(max_c, float(np.max(inh.max_constraint_residual)))
            gap = _pathwise_errors(out.states, inh.states, task.measure_at)
            err_i = _pathwise_errors(ref_states, inh.states, task.measure_at)
            bad = bad | inh.failed
            sq_gap[pos] = np.where(bad, 0.0, gap) ** 2
            sq_inh[pos] = np.where(bad, 0.0, err_i) ** 2
            failed[pos] = bad
    return _ChunkResult(
        sq_errors=sq, failed=failed, max_constraint=max_c, sq_gap=sq_gap, sq_inherent=sq_inh
    )


def _run_tasks(tasks: list[_ChunkTask], workers: int) -> list[_ChunkResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [_run_chunk(t) for t in tasks]
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_chunk, tasks))
    except Exception:
        # Unpicklable user problems fall back to in-process execution.
        return [_run_chunk(t) for t in tasks]


def _chunks(n_paths: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]


def _theta_errors(
    prob: SdaeProblem,
    theta: float,
    levels: Sequence[int],
    ref_level: int,
    n_paths: int,
    seed: int,
    measure_at: str,
    newton: NewtonConfig,
    precondition: bool,
    constraint_check_tol: float,
    workers: int,
    compare_inherent: bool = False,
) -> tuple[list[LevelPoint], float, list[_ChunkResult]]:
    tasks = [
        _ChunkTask(
            prob=prob,
            theta=theta,
            ref_level=ref_level,
            levels=tuple(levels),
            seed=seed,
            lo=lo,
            hi=hi,
            measure_at=measure_at,
            newton=newton,
            precondition=precondition,
            constraint_check_tol=constraint_check_tol,
            compare_inherent=compare_inherent,
        )
        for lo, hi in _chunks(n_paths)
    ]
    results = _run_tasks(tasks, workers)
    sq = np.concatenate([r.sq_errors for r in results], axis=1)
    failed = np.concatenate([r.failed for r in results], axis=1)
    max_c = max(r.max_constraint for r in results)
    points = []
    for pos, level in enumerate(levels):
        good = ~failed[pos]
        n_failed = int(np.count_nonzero(failed[pos]))
        if not np.any(good):
            raise ExperimentError(
                f"all paths failed at theta={theta}, level={level}"
            )
        rms = float(np.sqrt(np.mean(sq[pos][good])))
        delta = prob.horizon / round(prob.horizon * 2**level)
        points.append(LevelPoint(level=level, delta=delta, rms=rms, n_failed=n_failed))
    return points, max_c, results


def strong_error(
    prob: SdaeProblem,
    theta: float,
    level: int,
    ref_level: int,
    n_paths: int,
    seed: int,
    measure_at: str = "terminal",
    newton: Optional[NewtonConfig] = None,
    precondition: bool = True,
    constraint_check_tol: float = 1e-3,
    workers: int = 1,
) -> tuple[float, int]:
    """RMS strong error of level ``level`` against the ``ref_level`` reference.

    Both solutions ride the same Brownian lattices.  Returns
    ``(rms, n_failed)`` with the RMS taken over successful paths only.
    """
    if level >= ref_level:
        raise ValueError("level must be below ref_level")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    points, _max_c, _ = _theta_errors(
        prob,
        theta,
        [level],
        ref_level,
        n_paths,
        seed,
        measure_at,
        newton or NewtonConfig(),
        precondition,
        constraint_check_tol,
        workers,
    )
    return points[0].rms, points[0].n_failed


def fit_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Ordinary least squares of log2(rms) against log2(delta).

    ``points`` is a sequence of ``(delta, rms)`` pairs with positive rms.
    """
    if len(points) < 2:
        raise ValueError("need at least two points to fit a slope")
    deltas = np.array([p[0] for p in points], dtype=float)
    rmses = np.array([p[1] for p in points], dtype=float)
    if np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    if np.any(rmses <= 0):
        raise ValueError("rms values must be positive to fit a log-log slope")
    x = np.log2(deltas)
    y = np.log2(rmses)
    xm = x.mean()
    ym = y.mean()
    denom = float(np.sum((x - xm) ** 2))
    if denom == 0.0:
        raise ValueError("all deltas identical; slope undefined")
    slope = float(np.sum((x - xm) * (y - ym)) / denom)
    intercept = float(ym - slope * xm)
    return slope, intercept


def run_convergence(cfg: ConvergenceConfig) -> ConvergenceReport:
    """Full level-ladder sweep over the configured thetas.

    Deterministic given the seed: every theta and level reuses the same
    per-path Brownian lattices.
    """
    import datetime

    prob = builtin(cfg.problem_label)
    series = []
    notes = []
    max_c = 0.0
    for theta in cfg.thetas:
        points, theta_max_c, _ = _theta_errors(
            prob,
            theta,
            list(cfg.coarse_levels),
            cfg.ref_level,
            cfg.n_paths,
            cfg.seed,
            cfg.measure_at,
            cfg.newton,
            cfg.precondition,
            cfg.constraint_check_tol,
            cfg.workers,
        )
        max_c = max(max_c, theta_max_c)
        slope, intercept = fit_slope([(p.delta, p.rms) for p in points])
        if slope >= PROVEN_MS_ORDER + 0.25:
            notes.append(
                f"theta={theta:g}: fitted order {slope:.3f} exceeds the proven "
                f"mean-square order {PROVEN_MS_ORDER:g}"
            )
        series.append(
            ThetaSeries(theta=theta, points=tuple(points), slope=slope, intercept=intercept)
        )
    return ConvergenceReport(
        problem_label=cfg.problem_label,
        seed=cfg.seed,
        n_paths=cfg.n_paths,
        measure_at=cfg.measure_at,
        generator_id=GENERATOR_ID,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        series=tuple(series),
        max_constraint_residual=max_c,
        notes=tuple(notes),
    )


def decoupling_comparison(
    prob: SdaeProblem,
    theta: float,
    level: int,
    ref_level: int,
    n_paths: int,
    seed: int,
    newton: Optional[NewtonConfig] = None,
    workers: int = 1,
) -> dict:
    """Coupled scheme vs inherent-SDE oracle on shared paths.

    Returns the RMS terminal gap between the two integrators and each
    integrator's RMS error against the fine coupled reference.
    """
    points, _max_c, results = _theta_errors(
        prob,
        theta,
        [level],
        ref_level,
        n_paths,
        seed,
        "terminal",
        newton or NewtonConfig(),
        True,
        1e-3,
        workers,
        compare_inherent=True,
    )
    sq_gap = np.concatenate([r.sq_gap for r in results], axis=1)[0]
    sq_inh = np.concatenate([r.sq_inherent for r in results], axis=1)[0]
    failed = np.concatenate([r.failed for r in results], axis=1)[0]
    good = ~failed
    return {
        "rms_gap": float(np.sqrt(np.mean(sq_gap[good]))),
        "rms_coupled": points[0].rms,
        "rms_inherent": float(np.sqrt(np.mean(sq_inh[good]))),
        "n_failed": int(np.count_nonzero(failed)),
    }


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

REPORT_HEADER = "problem,theta,delta_exp,delta,rms,n_paths,n_failed,seed"


def report_to_csv(report: ConvergenceReport) -> str:
    lines = [REPORT_HEADER]
    for s in report.series:
        for p in s.points:
            lines.append(
                f"{report.problem_label},{s.theta:g},{p.level},{p.delta:.17g},"
                f"{p.rms:.17g},{report.n_paths},{p.n_failed},{report.seed}"
            )
    for s in report.series:
        lines.append(f"#slope,{s.theta:g},{s.slope:.17g}")
        lines.append(f"#intercept,{s.theta:g},{s.intercept:.17g}")
    return "\n".join(lines) + "\n"


def write_report_csv(report: ConvergenceReport, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(report_to_csv(report))


@dataclass(frozen=True)
class ParsedReport:
    points: dict  # theta -> list of (level, delta, rms, n_paths, n_failed, seed)
    slopes: dict
    intercepts: dict


def read_report_csv(path: str) -> ParsedReport:
    points: dict[float, list] = {}
    slopes: dict[float, float] = {}
    intercepts: dict[float, float] = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"not a convergence report CSV (bad header): {path}")
    for ln in lines[1:]:
        cells = ln.split(",")
        if ln.startswith("#slope"):
            slopes[float(cells[1])] = float(cells[2])
        elif ln.startswith("#intercept"):
            intercepts[float(cells[1])] = float(cells[2])
        elif ln.startswith("#"):
            continue
        else:
            theta = float(cells[1])
            points.setdefault(theta, []).append(
                (
                    int(cells[2]),
                    float(cells[3]),
                    float(cells[4]),
                    int(cells[5]),
                    int(cells[6]),
                    int(cells[7]),
                )
            )
    return ParsedReport(points=points, slopes=slopes, intercepts=intercepts)


# ---------------------------------------------------------------------------
# Diagnostics: moment curves and Hoelder continuity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsReport:
    problem_label: str
    theta: float
    level: int
    p: float
    times: np.ndarray
    moments: np.ndarray
    holder_lags: np.ndarray
    holder_msq: np.ndarray
    holder_slope: float
    n_failed: int


def diagnostics(
    prob: SdaeProblem,
    theta: float,
    level: int,
    n_paths: int,
    seed: int,
    p: float = 4.0,
    newton: Optional[NewtonConfig] = None,
) -> DiagnosticsReport:
    """Empirical moment curve t -> E|X_t|^p and a Hoelder slope estimate.

    Mean squared increments are measured at lags {1, 2, 4, 8} steps and the
    slope of log E|X_t - X_s|^2 against log |t - s| is fitted by OLS.
    """
    if p >= prob.constants.p1:
        raise ValueError(f"p={p} must be below the problem's p1={prob.constants.p1}")
    k_steps = round(prob.horizon * 2**level)
    delta = prob.horizon / k_steps
    cfg = ThetaConfig(theta=theta, delta=delta, newton=newton or NewtonConfig())
    lags = np.array([1, 2, 4, 8], dtype=int)
    lags = lags[lags < k_steps]
    grid = _grid_for(prob, delta, k_steps)

    moment_sum = np.zeros(k_steps + 1)
    msq_sum = np.zeros(lags.size)
    msq_count = np.zeros(lags.size)
    n_good = 0
    n_failed = 0
    for lo, hi in _chunks(n_paths):
        fine = _fine_increments(prob, seed, level, lo, hi)
        out = integrate_ensemble(
            prob,
            cfg,
            fine,
            record_nodes=range(k_steps + 1),
            grid=grid,
        )
        good = ~out.failed
        n_failed += int(np.count_nonzero(out.failed))
        n_good += int(np.count_nonzero(good))
        states = out.states[good]  # (g, K+1, d)
        norms = np.sqrt(np.sum(states * states, axis=-1))
        moment_sum += np.sum(norms**p, axis=0)
        for i, lag in enumerate(lags):
            diff = states[:, lag:, :] - states[:, :-lag, :]
            msq_sum[i] += float(np.sum(diff * diff))
            msq_count[i] += diff.shape[0] * diff.shape[1]
    if n_good == 0:
        raise ExperimentError("all paths failed in diagnostics run")
    moments = moment_sum / n_good
    msq = msq_sum / np.maximum(msq_count, 1)
    slope, _ = fit_slope(list(zip(lags * delta, msq)))
    # fit_slope uses log2 on both axes, so the exponent is the same as in
    # natural logs; reuse it directly.
    return DiagnosticsReport(
        problem_label=prob.label,
        theta=theta,
        level=level,
        p=p,
        times=np.arange(k_steps + 1) * delta,
        moments=moments,
        holder_lags=lags * delta,
        holder_msq=msq,
        holder_slope=slope,
        n_failed=n_failed,
    )


DIAGNOSTICS_HEADER = "problem,theta,level,p,kind,arg,value"


def diagnostics_to_csv(report: DiagnosticsReport) -> str:
    lines = [DIAGNOSTICS_HEADER]
    prefix = f"{report.problem_label},{report.theta:g},{report.level},{report.p:g}"
    for t, mom in zip(report.times, report.moments):
        lines.append(f"{prefix},moment,{t:.17g},{mom:.17g}")
    for lag, msq in zip(report.holder_lags, report.holder_msq):
        lines.append(f"{prefix},holder,{lag:.17g},{msq:.17g}")
    lines.append(f"#holder_slope,{report.theta:g},{report.holder_slope:.17g}")
    return "\n".join(lines) + "\n"
