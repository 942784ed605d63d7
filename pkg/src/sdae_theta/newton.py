"""Damped Newton--Raphson for square nonlinear systems.

The workhorse is :func:`newton_solve_batch`, which runs many independent
systems of the same shape side by side on ``(n, d)`` arrays; the public
:func:`newton_solve` wraps a single system around it.  Residual and
Jacobian callables are always evaluated on the full batch and every
per-system decision (step length, backtracking, stopping) is made
row-wise, so results do not depend on how a batch is split up.

Convergence requires both the step max-norm below ``tol`` and the residual
max-norm below ``10 * tol``; a residual that collapses to rounding level
converges immediately (an exact solve of an affine system counts as one
iteration).  After the test first passes, up to two cheap polishing
iterations push the residual well below the tolerance, which keeps
per-step algebraic errors from accumulating along long trajectories.

Rank-deficient Jacobians with identically-zero rows (a vacuous equation,
e.g. a constraint row that reads 0 = 0) are handled by pinning the matching
step component to zero; any other singularity is reported as an honest
non-convergence, never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Residual at or below _FLOOR_REL * (1 + initial residual) counts as solved.
_FLOOR_REL = 1e-13
# A Jacobian row below _PIN_REL times the item's largest row is degenerate.
_PIN_REL = 1e-14
_POLISH_ITERS = 2


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-5
    max_iter: int = 50
    damping: float = 0.5
    max_backtracks: int = 20

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not (0.0 < self.damping < 1.0):
            raise ValueError("damping must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")


@dataclass(frozen=True)
class NewtonOutcome:
    solution: np.ndarray
    iterations: int
    final_residual_norm: float
    converged: bool


@dataclass(frozen=True)
class NewtonBatchOutcome:
    solution: np.ndarray             # (n, d)
    iterations: np.ndarray           # (n,) int
    final_residual_norm: np.ndarray  # (n,)
    converged: np.ndarray            # (n,) bool


def _inf_norm(rows: np.ndarray) -> np.ndarray:
    if rows.shape[-1] == 0:
        return np.zeros(rows.shape[:-1])
    return np.max(np.abs(rows), axis=-1)


def _solve_steps(jac: np.ndarray, res: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-item linear solves with degenerate-row pinning.

    Returns the Newton steps and a mask of items whose systems could not be
    solved (inconsistent degenerate row, or singular beyond pinning).
    """
    n, d, _ = jac.shape
    bad = np.zeros(n, dtype=bool)
    if d == 0:
        return np.zeros((n, 0)), bad
    jac = jac.copy()
    res = res.copy()
    finite = np.all(np.isfinite(jac), axis=(1, 2)) & np.all(np.isfinite(res), axis=1)
    bad |= ~finite
    if np.any(bad):
        jac[bad] = np.eye(d)
        res[bad] = 0.0
    row_inf = np.max(np.abs(jac), axis=2)          # (n, d)
    scale = np.maximum(np.max(row_inf, axis=1), 1e-300)
    degenerate = row_inf <= _PIN_REL * scale[:, None]
    if np.any(degenerate):
        # A vacuous equation must come with a vacuous residual; otherwise
        # the system is inconsistent and the item fails.
        res_scale = np.maximum(_inf_norm(res), 1.0)
        inconsistent = degenerate & (np.abs(res) > 1e-9 * res_scale[:, None])
        bad |= np.any(inconsistent, axis=1)
        items, rows = np.nonzero(degenerate)
        jac[items, rows, :] = 0.0
        jac[items, rows, rows] = 1.0
        res[items, rows] = 0.0
    try:
        steps = np.linalg.solve(jac, res[..., None])[..., 0]
    except np.linalg.LinAlgError:
        steps = np.zeros_like(res)
        for i in range(n):
            try:
                steps[i] = np.linalg.solve(jac[i], res[i])
            except np.linalg.LinAlgError:
                bad[i] = True
    bad |= ~np.all(np.isfinite(steps), axis=1)
    steps[bad] = 0.0
    return steps, bad


def newton_solve_batch(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x_init: np.ndarray,
    cfg: NewtonConfig = NewtonConfig(),
) -> NewtonBatchOutcome:
    """Solve ``residual(x) = 0`` independently for every row of ``x_init``.

    ``residual`` maps ``(n, d) -> (n, d)`` and ``jacobian`` maps
    ``(n, d) -> (n, d, d)``; both are always called on the full batch, with
    rows aligned to ``x_init``.
    """
    x = np.array(x_init, dtype=float)
    n, d = x.shape
    with np.errstate(over="ignore", invalid="ignore"):
        res = np.asarray(residual(x), dtype=float)
    res_norm = _inf_norm(res)
    floor = _FLOOR_REL * (1.0 + np.where(np.isfinite(res_norm), res_norm, 0.0))
    polish_skip = np.maximum(floor, 0.01 * cfg.tol)

    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    failed = ~np.isfinite(res_norm)
    met = np.zeros(n, dtype=bool)
    iters_after_met = np.zeros(n, dtype=int)
    active = ~failed

    for _ in range(cfg.max_iter):
        if not np.any(active):
            break
        with np.errstate(over="ignore", invalid="ignore"):
            jac = np.asarray(jacobian(x), dtype=float)
        jac = jac.copy()
        res_in = res.copy()
        jac[~active] = np.eye(d)
        res_in[~active] = 0.0
        steps, bad = _solve_steps(jac, res_in)
        bad &= active

        alpha = np.ones(n)
        x_try = x - steps
        with np.errstate(over="ignore", invalid="ignore"):
            res_try = np.asarray(residual(x_try), dtype=float)
        norm_try = _inf_norm(res_try)
        # NaN compares false, so diverged candidates are simply rejected.
        accepted = active & ~bad & (norm_try <= res_norm)
        for _bt in range(cfg.max_backtracks):
            pending = active & ~bad & ~accepted
            if not np.any(pending):
                break
            alpha[pending] *= cfg.damping
            x_try[pending] = x[pending] - alpha[pending, None] * steps[pending]
            with np.errstate(over="ignore", invalid="ignore"):
                res_try = np.asarray(residual(x_try), dtype=float)
            norm_try = _inf_norm(res_try)
            accepted |= pending & (norm_try <= res_norm)

        stalled = active & ~bad & ~accepted
        iterations[active] += 1

        upd = accepted
        if np.any(upd):
            x[upd] = x_try[upd]
            res[upd] = res_try[upd]
            res_norm[upd] = norm_try[upd]
            step_inf = alpha * _inf_norm(steps)
            crit = (step_inf <= cfg.tol) & (res_norm <= 10.0 * cfg.tol)
            crit |= res_norm <= floor
            met |= upd & crit
            iters_after_met[upd & met] += 1
            done = upd & met & (
                (res_norm <= polish_skip) | (iters_after_met > _POLISH_ITERS)
            )
            converged |= done
            active &= ~done

        lost = bad | stalled
        if np.any(lost):
            failed |= lost
            active &= ~lost

    # Rows that met the test but were still polishing when iterations ran
    # out still count as converged.
    converged |= active & met
    return NewtonBatchOutcome(
        solution=x,
        iterations=iterations,
        final_residual_norm=res_norm,
        converged=converged & ~failed,
    )


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x_init: np.ndarray,
    cfg: NewtonConfig = NewtonConfig(),
) -> NewtonOutcome:
    """Solve a single square system ``residual(x) = 0`` from ``x_init``.

    ``residual`` and ``jacobian`` take and return plain ``(d,)`` vectors and
    ``(d, d)`` matrices.  Failure modes (singular Jacobian, non-finite
    residual, stalled backtracking) come back as ``converged=False`` with
    the last iterate, not as exceptions.
    """
    x0 = np.atleast_1d(np.asarray(x_init, dtype=float))
    d = x0.shape[0]
    probe = np.atleast_1d(np.asarray(residual(x0), dtype=float))
    if probe.shape != (d,):
        raise ValueError(f"residual returns shape {probe.shape}, expected ({d},)")

    def res_rows(rows: np.ndarray) -> np.ndarray:
        return np.stack(
            [np.atleast_1d(np.asarray(residual(r), dtype=float)) for r in rows]
        )

    def jac_rows(rows: np.ndarray) -> np.ndarray:
        return np.stack(
            [np.asarray(jacobian(r), dtype=float).reshape(d, d) for r in rows]
        )

    out = newton_solve_batch(res_rows, jac_rows, x0[None, :], cfg)
    return NewtonOutcome(
        solution=out.solution[0],
        iterations=int(out.iterations[0]),
        final_residual_norm=float(out.final_residual_norm[0]),
        converged=bool(out.converged[0]),
    )
