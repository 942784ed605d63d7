"""The stochastic theta method for index-1 SDAEs.

One step solves the implicit system

    A(t_{k+1}) x_{k+1} = A(t_k) x_k + theta*Delta*F(t_{k+1}, x_{k+1})
                         + (1-theta)*Delta*F(t_k, x_k) + G(t_k, x_k) dW_k

for ``theta in [1/2, 1]`` by damped Newton.  By default Newton works on the
left-scaled system ``D H(x) = 0`` with ``D = A A^- - R / (theta*Delta)`` at
``t_{k+1}``: D is invertible (A A^- and R are complementary orthogonal
projectors), so the root set is unchanged, while the algebraic residual
rows stop shrinking like O(Delta) and the scaled Jacobian approaches the
index-1 matrix ``A + R F'_x``.  Without the scaling, conditioning degrades
as the grid is refined.

Everything steps whole path ensembles: states are ``(n, d)`` arrays and all
per-path operations are elementwise or per-item batched, so results are
identical whether paths run together, alone, or split into chunks.  The
scalar API (:func:`stm_step`, :func:`integrate`) wraps an ensemble of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linalg import ProjectorBundle, projectors
from .newton import NewtonConfig, newton_solve_batch
from .problems import ProblemConstants, SdaeProblem, check_initial_consistency


@dataclass(frozen=True)
class ThetaConfig:
    theta: float
    delta: float
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    precondition: bool = True
    constraint_check_tol: float = 1e-3

    def __post_init__(self):
        if not (0.5 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [1/2, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.constraint_check_tol <= 0:
            raise ValueError("constraint_check_tol must be positive")


@dataclass(frozen=True)
class StepDiagnostics:
    newton_iterations: int
    newton_residual: float
    constraint_residual: float
    converged: bool


class StepFailure(RuntimeError):
    """A theta step did not produce an acceptable state."""

    def __init__(self, message: str, diagnostics: StepDiagnostics, state: np.ndarray):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.state = state


@dataclass(frozen=True)
class Trajectory:
    """Time grid, states and per-step diagnostics of one integrated path.

    For a failed run the arrays stop at the last good node and
    ``failure_index`` holds the index of the step that failed.
    """

    times: np.ndarray
    states: np.ndarray
    newton_iters: np.ndarray
    constraint_residuals: np.ndarray
    failure_index: Optional[int] = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def stm_residual(
    prob: SdaeProblem,
    theta: float,
    delta: float,
    t_k: float,
    x_k: np.ndarray,
    dw: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Implicit-step residual H(x); zero exactly at the next state.

    Vectorized over leading axes of ``x`` (with ``x_k``/``dw`` broadcast).
    """
    x_k = np.asarray(x_k, dtype=float)
    dw = np.asarray(dw, dtype=float)
    x = np.asarray(x, dtype=float)
    t_next = t_k + delta
    a_k = prob.a_of_t(t_k)
    a_next = prob.a_of_t(t_next)
    bracket = (
        x_k @ a_k.T
        + (1.0 - theta) * delta * prob.f_drift(t_k, x_k)
        + np.einsum("...dm,...m->...d", prob.g_diffusion(t_k, x_k), dw)
    )
    return x @ a_next.T - theta * delta * prob.f_drift(t_next, x) - bracket


@dataclass(frozen=True)
class _StepBatch:
    states: np.ndarray                # (n, d)
    newton_iters: np.ndarray          # (n,)
    newton_residuals: np.ndarray      # (n,)
    constraint_residuals: np.ndarray  # (n,)
    ok: np.ndarray                    # (n,) bool


def _step_batch(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    t_k: float,
    a_k: np.ndarray,
    bundle_next: ProjectorBundle,
    x_k: np.ndarray,
    dw: np.ndarray,
) -> _StepBatch:
    """One theta step for every row of ``x_k`` (shape ``(n, d)``)."""
    theta, delta = cfg.theta, cfg.delta
    t_next = t_k + delta
    a_next = bundle_next.a
    with np.errstate(over="ignore", invalid="ignore"):
        bracket = (
            x_k @ a_k.T
            + (1.0 - theta) * delta * prob.f_drift(t_k, x_k)
            + np.einsum("ndm,nm->nd", prob.g_diffusion(t_k, x_k), dw)
        )
    if cfg.precondition:
        scale = np.eye(prob.d) - (1.0 + 1.0 / (theta * delta)) * bundle_next.r_proj
    else:
        scale = None

    def residual(x: np.ndarray) -> np.ndarray:
        h = x @ a_next.T - theta * delta * prob.f_drift(t_next, x) - bracket
        return h if scale is None else h @ scale.T

    def jacobian(x: np.ndarray) -> np.ndarray:
        j = a_next[None, :, :] - theta * delta * prob.f_jacobian(t_next, x)
        return j if scale is None else np.matmul(scale, j)

    out = newton_solve_batch(residual, jacobian, x_k, cfg.newton)
    x_next = out.solution
    with np.errstate(over="ignore", invalid="ignore"):
        c_res = prob.f_drift(t_next, x_next) @ bundle_next.r_proj.T
    c_norm = np.max(np.abs(c_res), axis=-1)
    c_norm = np.where(np.isfinite(c_norm), c_norm, np.inf)
    finite = np.all(np.isfinite(x_next), axis=-1)
    ok = out.converged & finite & (c_norm <= cfg.constraint_check_tol)
    return _StepBatch(
        states=x_next,
        newton_iters=out.iterations,
        newton_residuals=out.final_residual_norm,
        constraint_residuals=c_norm,
        ok=ok,
    )


@dataclass(frozen=True)
class EnsembleResult:
    """Batched integration output.

    ``states`` holds the states at ``record_nodes`` (grid indices), shape
    ``(n, len(record_nodes), d)``.  ``failed`` marks paths whose first
    failing step is ``failure_step``; their recorded states are frozen at
    the last good value.  ``max_constraint_residual`` is the per-path max of
    ``|R F(t_k, x_k)|_inf`` over all grid nodes reached.
    """

    times: np.ndarray
    record_nodes: np.ndarray
    states: np.ndarray
    failed: np.ndarray
    failure_step: np.ndarray
    max_constraint_residual: np.ndarray
    newton_iters_total: np.ndarray
    newton_iters: Optional[np.ndarray] = None
    constraint_residuals: Optional[np.ndarray] = None


class GridData:
    """Per-grid constraint matrices and projectors, shared across path chunks."""

    def __init__(self, prob: SdaeProblem, delta: float, n_steps: int):
        self.delta = delta
        self.n_steps = n_steps
        self.times = np.arange(n_steps + 1) * delta
        self.a_mats = [prob.a_of_t(float(t)) for t in self.times]
        self.bundles = [projectors(a) for a in self.a_mats]


def integrate_ensemble(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    increments: np.ndarray,
    record_nodes: Optional[Sequence[int]] = None,
    full_diagnostics: bool = False,
    grid: Optional[GridData] = None,
) -> EnsembleResult:
    """Integrate every path of ``increments`` (shape ``(n, K, m)``).

    ``record_nodes`` selects which grid nodes to keep (default: terminal
    node only; pass ``range(K + 1)`` for everything).  Paths whose step
    fails (Newton non-convergence, non-finite state, or constraint residual
    above ``cfg.constraint_check_tol``) are frozen and flagged while the
    remaining paths continue.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3:
        raise ValueError("increments must have shape (n_paths, n_steps, m)")
    n, n_steps, m = increments.shape
    if m != prob.m:
        raise ValueError(f"increments have m={m}, problem has m={prob.m}")
    expected = prob.horizon / cfg.delta
    if abs(expected - round(expected)) > 1e-9 or round(expected) != n_steps:
        raise ValueError(
            f"{n_steps} increments do not tile [0, {prob.horizon}] at delta={cfg.delta}"
        )
    if grid is None:
        grid = GridData(prob, cfg.delta, n_steps)

    if record_nodes is None:
        record_nodes = [n_steps]
    record_nodes = np.asarray(sorted(set(int(k) for k in record_nodes)), dtype=int)
    if record_nodes.size and (record_nodes[0] < 0 or record_nodes[-1] > n_steps):
        raise ValueError("record_nodes out of range")
    slot_of = {int(node): i for i, node in enumerate(record_nodes)}

    x = np.broadcast_to(prob.x0, (n, prob.d)).copy()
    states = np.empty((n, record_nodes.size, prob.d))
    failed = np.zeros(n, dtype=bool)
    failure_step = np.full(n, -1, dtype=int)
    iters_total = np.zeros(n, dtype=int)
    newton_iters = np.zeros((n, n_steps), dtype=int) if full_diagnostics else None
    c_resids = np.zeros((n, n_steps + 1)) if full_diagnostics else None

    c0 = prob.f_drift(0.0, x) @ grid.bundles[0].r_proj.T
    c0_norm = np.max(np.abs(c0), axis=-1)
    if np.any(c0_norm > cfg.constraint_check_tol):
        raise ValueError(
            "initial value is infeasible: |R F(0, x0)| = "
            f"{float(np.max(c0_norm)):.3e} > {cfg.constraint_check_tol:.1e}"
        )
    max_c = c0_norm.copy()
    if full_diagnostics:
        c_resids[:, 0] = c0_norm
    if 0 in slot_of:
        states[:, slot_of[0], :] = x

    for k in range(n_steps):
        alive = np.flatnonzero(~failed)
        if alive.size:
            step = _step_batch(
                prob,
                cfg,
                float(grid.times[k]),
                grid.a_mats[k],
                grid.bundles[k + 1],
                x[alive],
                increments[alive, k, :],
            )
            bad = ~step.ok
            good = alive[~bad]
            x[good] = step.states[~bad]
            newly = alive[bad]
            failed[newly] = True
            failure_step[newly] = k
            max_c[good] = np.maximum(max_c[good], step.constraint_residuals[~bad])
            iters_total[alive] += step.newton_iters
            if full_diagnostics:
                newton_iters[alive, k] = step.newton_iters
                c_resids[good, k + 1] = step.constraint_residuals[~bad]
        if (k + 1) in slot_of:
            states[:, slot_of[k + 1], :] = x

    return EnsembleResult(
        times=grid.times,
        record_nodes=record_nodes,
        states=states,
        failed=failed,
        failure_step=failure_step,
        max_constraint_residual=max_c,
        newton_iters_total=iters_total,
        newton_iters=newton_iters,
        constraint_residuals=c_resids,
    )


def stm_step(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    t_k: float,
    x_k: np.ndarray,
    dw: np.ndarray,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One theta step from a feasible state; raises :class:`StepFailure` on trouble."""
    x_k = np.asarray(x_k, dtype=float).reshape(1, prob.d)
    dw = np.asarray(dw, dtype=float).reshape(1, prob.m)
    bundle_next = projectors(prob.a_of_t(t_k + cfg.delta))
    step = _step_batch(prob, cfg, t_k, prob.a_of_t(t_k), bundle_next, x_k, dw)
    diag = StepDiagnostics(
        newton_iterations=int(step.newton_iters[0]),
        newton_residual=float(step.newton_residuals[0]),
        constraint_residual=float(step.constraint_residuals[0]),
        converged=bool(step.ok[0]),
    )
    if not step.ok[0]:
        raise StepFailure("theta step failed", diag, step.states[0])
    return step.states[0], diag


def integrate(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    increments: np.ndarray,
) -> Trajectory:
    """Integrate one path; ``increments`` has shape ``(K, m)``.

    A failing step ends the trajectory early with ``failure_index`` set.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 2:
        raise ValueError("increments must have shape (n_steps, m)")
    ok, resid = check_initial_consistency(prob, tol=cfg.constraint_check_tol)
    if not ok:
        raise ValueError(f"initial value infeasible: residual {resid:.3e}")
    n_steps = increments.shape[0]
    out = integrate_ensemble(
        prob,
        cfg,
        increments[None, :, :],
        record_nodes=range(n_steps + 1),
        full_diagnostics=True,
    )
    states = out.states[0]
    iters = np.concatenate([[0], out.newton_iters[0]])
    c_res = out.constraint_residuals[0]
    if out.failed[0]:
        stop = int(out.failure_step[0])
        return Trajectory(
            times=out.times[: stop + 1],
            states=states[: stop + 1],
            newton_iters=iters[: stop + 1],
            constraint_residuals=c_res[: stop + 1],
            failure_index=stop,
        )
    return Trajectory(
        times=out.times,
        states=states,
        newton_iters=iters,
        constraint_residuals=c_res,
        failure_index=None,
    )


@dataclass(frozen=True)
class GuardReport:
    ok: bool
    bound: Optional[float]
    message: str


def stepsize_guard(constants: ProblemConstants, theta: float, delta: float) -> GuardReport:
    """Check ``delta`` against the sufficient stepsize bounds.

    Uses ``1 / (L1 * theta * (1 + Lhat^2))`` when ``lhat`` is declared and
    ``1 / (2 * L2 * theta)`` when ``coupling_l2`` is; warns (never fails)
    when ``delta`` is not strictly below the smallest applicable bound.
    """
    bounds = []
    if constants.lhat is not None:
        bounds.append(
            1.0 / (constants.monotonicity_l1 * theta * (1.0 + constants.lhat**2))
        )
    if constants.coupling_l2 is not None:
        bounds.append(1.0 / (2.0 * constants.coupling_l2 * theta))
    if not bounds:
        return GuardReport(True, None, "no applicable bound declared; guard skipped")
    bound = min(bounds)
    if delta < bound:
        return GuardReport(True, bound, f"delta={delta:g} < bound={bound:g}")
    return GuardReport(
        False,
        bound,
        f"delta={delta:g} >= sufficient bound {bound:g} "
        "(the bound is sufficient, not necessary)",
    )


def trajectory_to_csv(traj: Trajectory) -> str:
    """Render a trajectory as CSV with full double precision."""
    d = traj.states.shape[1]
    header = "t," + ",".join(f"x{i+1}" for i in range(d)) + ",newton_iters,constraint_residual"
    lines = [header]
    for j in range(traj.states.shape[0]):
        cells = [f"{traj.times[j]:.17g}"]
        cells += [f"{v:.17g}" for v in traj.states[j]]
        cells.append(str(int(traj.newton_iters[j])))
        cells.append(f"{traj.constraint_residuals[j]:.17g}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(trajectory_to_csv(traj))
