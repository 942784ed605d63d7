"""Decoupled formulation: constraint solve, inherent-SDE coefficients, oracle integrator.

The state splits as ``X = U + V`` with ``U = P X`` the differential part.
For a given ``u``, the algebraic part is the unique ``v`` solving

    A(t) v + R F(t, u + v) = 0,

solved here in reduced coordinates: ``v = B s`` with ``B`` an orthonormal
basis of Ker(A) (so ``A v = 0`` and ``P v = 0`` hold by construction) and
the residual expressed in an orthonormal basis ``C`` of Im(R), giving a
square, well-conditioned ``(d - r)``-dimensional system.

``integrate_inherent`` applies the plain theta method to the unconstrained
SDE for the differential component and reconstructs ``X_k = U_k + V(t_k, U_k)``.
Because the coupled scheme differences ``A(t_{k+1}) x_{k+1} - A(t_k) x_k``,
its fine-grid limit treats ``A(t) X_t`` as the integrated quantity; the
decoupled form of that limit carries the product-rule drift term
``-A^-(t) A'(t) U`` on top of ``f = A^- F(., . + V)``:

    dU = ( f(t, U) - A^-(t) A'(t) U ) dt + g(t, U) dW.

For a constant matrix the extra term vanishes and the drift is plainly
``f``.  ``A'`` is obtained by central differencing of ``a_of_t``.  This
discretization is genuinely different from the coupled scheme (it never
forms the implicit constraint system), so it serves as an independent
cross-check converging to the same limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .linalg import ProjectorBundle, projectors
from .newton import NewtonConfig, newton_solve_batch
from .problems import SdaeProblem, check_initial_consistency
from .stepper import EnsembleResult, ThetaConfig, Trajectory

# The reduced constraint system is solved to essentially machine precision
# so reconstructed states are feasible by construction.
_INNER_NEWTON = NewtonConfig(tol=1e-12, max_iter=60, damping=0.5, max_backtracks=25)

CONSTRAINT_RESIDUAL_TOL = 1e-10


def _solve_constraint_batch(
    prob: SdaeProblem,
    bundle: ProjectorBundle,
    t: float,
    u: np.ndarray,
    v_init: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the algebraic constraint for every row of ``u``.

    Returns ``(v, ok)`` where ``v[i]`` lies in Ker(A) and ``ok[i]`` flags a
    converged solve with final constraint residual below tolerance.
    """
    n = u.shape[0]
    basis = bundle.ker_basis          # (d, q)
    cobasis = bundle.coker_basis      # (d, q)
    q = basis.shape[1]
    if q == 0:
        return np.zeros_like(u), np.ones(n, dtype=bool)

    def residual(s: np.ndarray) -> np.ndarray:
        return prob.f_drift(t, u + s @ basis.T) @ cobasis

    def jacobian(s: np.ndarray) -> np.ndarray:
        fx = prob.f_jacobian(t, u + s @ basis.T)
        return np.matmul(np.matmul(cobasis.T, fx), basis)

    s0 = v_init @ basis if v_init is not None else np.zeros((n, q))
    out = newton_solve_batch(residual, jacobian, s0, _INNER_NEWTON)
    v = out.solution @ basis.T
    ok = out.converged & (out.final_residual_norm <= CONSTRAINT_RESIDUAL_TOL)
    return v, ok


def solve_constraint(
    prob: SdaeProblem,
    t: float,
    u: np.ndarray,
    v_init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """The unique ``v`` with ``A(t) v + R F(t, u + v) = 0`` and ``P v = 0``.

    Raises ``RuntimeError`` if the inner Newton solve does not converge.
    """
    u = np.asarray(u, dtype=float).reshape(1, prob.d)
    bundle = projectors(prob.a_of_t(t))
    vi = None if v_init is None else np.asarray(v_init, dtype=float).reshape(1, prob.d)
    v, ok = _solve_constraint_batch(prob, bundle, t, u, vi)
    if not ok[0]:
        raise RuntimeError(f"constraint solve did not converge at t={t}")
    return v[0]


@dataclass(frozen=True)
class InherentCoefficients:
    """Drift and diffusion of the inherent (unconstrained) SDE.

    ``f_eval(t, u)`` maps ``(n, d) -> (n, d)`` and ``g_eval(t, u)`` maps
    ``(n, d) -> (n, d, m)``; single ``(d,)`` vectors work too.
    """

    f_eval: Callable[[float, np.ndarray], np.ndarray]
    g_eval: Callable[[float, np.ndarray], np.ndarray]


def inherent_coeffs(prob: SdaeProblem) -> InherentCoefficients:
    """Coefficient closures performing the constraint solve per evaluation."""

    def lift(u: np.ndarray) -> tuple[np.ndarray, bool]:
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return u[None, :], True
        return u, False

    def f_eval(t: float, u: np.ndarray) -> np.ndarray:
        rows, squeeze = lift(u)
        bundle = projectors(prob.a_of_t(t))
        v, ok = _solve_constraint_batch(prob, bundle, t, rows)
        if not np.all(ok):
            raise RuntimeError(f"constraint solve did not converge at t={t}")
        out = prob.f_drift(t, rows + v) @ bundle.a_pinv.T
        return out[0] if squeeze else out

    def g_eval(t: float, u: np.ndarray) -> np.ndarray:
        rows, squeeze = lift(u)
        bundle = projectors(prob.a_of_t(t))
        v, ok = _solve_constraint_batch(prob, bundle, t, rows)
        if not np.all(ok):
            raise RuntimeError(f"constraint solve did not converge at t={t}")
        out = np.einsum("ij,njm->nim", bundle.a_pinv, prob.g_diffusion(t, rows + v))
        return out[0] if squeeze else out

    return InherentCoefficients(f_eval=f_eval, g_eval=g_eval)


def _pinned_matrix_solve(jac: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched solve with matrix right-hand sides, pinning zero rows.

    Used for the implicit-function derivative ``V'_u = -J^{-1} R F'_x``; a
    vacuous constraint row (zero row of J with zero rhs row) contributes a
    zero row to the derivative.
    """
    jac = jac.copy()
    rhs = rhs.copy()
    d = jac.shape[1]
    row_inf = np.max(np.abs(jac), axis=2)
    scale = np.maximum(np.max(row_inf, axis=1), 1e-300)
    degenerate = row_inf <= 1e-14 * scale[:, None]
    if np.any(degenerate):
        items, rows = np.nonzero(degenerate)
        jac[items, rows, :] = 0.0
        jac[items, rows, rows] = 1.0
        rhs[items, rows, :] = 0.0
    try:
        return np.linalg.solve(jac, rhs)
    except np.linalg.LinAlgError:
        # Isolate singular items: their derivative block becomes zero and
        # the affected path fails honestly in the outer Newton iteration.
        out = np.zeros_like(rhs)
        for i in range(jac.shape[0]):
            try:
                out[i] = np.linalg.solve(jac[i], rhs[i])
            except np.linalg.LinAlgError:
                out[i] = 0.0
        return out


def integrate_inherent_ensemble(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    increments: np.ndarray,
    record_nodes: Optional[Sequence[int]] = None,
    full_diagnostics: bool = False,
) -> EnsembleResult:
    """Theta method on the inherent SDE for a path ensemble, reconstructed to X."""
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3:
        raise ValueError("increments must have shape (n_paths, n_steps, m)")
    n, n_steps, m = increments.shape
    if m != prob.m:
        raise ValueError(f"increments have m={m}, problem has m={prob.m}")
    theta, delta = cfg.theta, cfg.delta
    expected = prob.horizon / delta
    if abs(expected - round(expected)) > 1e-9 or round(expected) != n_steps:
        raise ValueError("increment count does not match horizon/delta")

    times = np.arange(n_steps + 1) * delta
    bundles = [projectors(prob.a_of_t(float(t))) for t in times]
    # Product-rule drift matrices A^-(t) A'(t); None where A is locally constant.
    corrections: list[Optional[np.ndarray]] = []
    h_fd = 1e-6
    for t, b in zip(times, bundles):
        a_dot = (prob.a_of_t(float(t) + h_fd) - prob.a_of_t(float(t) - h_fd)) / (2.0 * h_fd)
        corr = b.a_pinv @ a_dot
        corrections.append(corr if np.any(corr != 0.0) else None)

    if record_nodes is None:
        record_nodes = [n_steps]
    record_nodes = np.asarray(sorted(set(int(k) for k in record_nodes)), dtype=int)
    slot_of = {int(node): i for i, node in enumerate(record_nodes)}

    x0 = np.broadcast_to(prob.x0, (n, prob.d))
    u = x0 @ bundles[0].p.T
    v = x0 - u                       # Q x0, the warm start for the first solve
    x_cur = x0.copy()

    states = np.empty((n, record_nodes.size, prob.d))
    failed = np.zeros(n, dtype=bool)
    failure_step = np.full(n, -1, dtype=int)
    iters_total = np.zeros(n, dtype=int)
    newton_iters = np.zeros((n, n_steps), dtype=int) if full_diagnostics else None
    c_resids = np.zeros((n, n_steps + 1)) if full_diagnostics else None

    def c_norm_of(t: float, bundle: ProjectorBundle, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            r = prob.f_drift(t, x) @ bundle.r_proj.T
        r = np.max(np.abs(r), axis=-1)
        return np.where(np.isfinite(r), r, np.inf)

    c0 = c_norm_of(0.0, bundles[0], x_cur)
    if np.any(c0 > cfg.constraint_check_tol):
        raise ValueError("initial value is infeasible for the inherent integrator")
    max_c = c0.copy()
    if full_diagnostics:
        c_resids[:, 0] = c0
    if 0 in slot_of:
        states[:, slot_of[0], :] = x_cur

    for k in range(n_steps):
        t0, t1 = float(times[k]), float(times[k + 1])
        b0, b1 = bundles[k], bundles[k + 1]
        alive = np.flatnonzero(~failed)
        if alive.size:
            ua = u[alive]
            va = v[alive]
            xa = ua + va
            corr0, corr1 = corrections[k], corrections[k + 1]
            with np.errstate(over="ignore", invalid="ignore"):
                f0 = prob.f_drift(t0, xa) @ b0.a_pinv.T
                if corr0 is not None:
                    f0 = f0 - ua @ corr0.T
                g0 = np.einsum(
                    "ij,njm->nim", b0.a_pinv, prob.g_diffusion(t0, xa)
                )
                rhs = ua + (1.0 - theta) * delta * f0 + np.einsum(
                    "ndm,nm->nd", g0, increments[alive, k, :]
                )

            warm = {"v": va.copy()}

            def residual(uu: np.ndarray) -> np.ndarray:
                vv, _ok = _solve_constraint_batch(prob, b1, t1, uu, warm["v"])
                warm["v"] = vv
                with np.errstate(over="ignore", invalid="ignore"):
                    f1 = prob.f_drift(t1, uu + vv) @ b1.a_pinv.T
                    if corr1 is not None:
                        f1 = f1 - uu @ corr1.T
                return uu - theta * delta * f1 - rhs

            def jacobian(uu: np.ndarray) -> np.ndarray:
                vv, _ok = _solve_constraint_batch(prob, b1, t1, uu, warm["v"])
                warm["v"] = vv
                xt = uu + vv
                with np.errstate(over="ignore", invalid="ignore"):
                    fx = prob.f_jacobian(t1, xt)
                    j_con = b1.a[None, :, :] + np.matmul(b1.r_proj, fx)
                    dv = -_pinned_matrix_solve(j_con, np.matmul(b1.r_proj, fx))
                    dxdu = np.eye(prob.d)[None, :, :] + dv
                    f_u = np.matmul(np.matmul(b1.a_pinv, fx), dxdu)
                    if corr1 is not None:
                        f_u = f_u - corr1[None, :, :]
                return np.eye(prob.d)[None, :, :] - theta * delta * f_u

            out = newton_solve_batch(residual, jacobian, ua, cfg.newton)
            u1 = out.solution
            v1, inner_ok = _solve_constraint_batch(prob, b1, t1, u1, warm["v"])
            x1 = u1 + v1
            c_norm = c_norm_of(t1, b1, x1)
            finite = np.all(np.isfinite(x1), axis=-1)
            ok = out.converged & inner_ok & finite & (c_norm <= cfg.constraint_check_tol)

            good = alive[ok]
            u[good] = u1[ok]
            v[good] = v1[ok]
            x_cur[good] = x1[ok]
            newly = alive[~ok]
            failed[newly] = True
            failure_step[newly] = k
            max_c[good] = np.maximum(max_c[good], c_norm[ok])
            iters_total[alive] += out.iterations
            if full_diagnostics:
                newton_iters[alive, k] = out.iterations
                c_resids[good, k + 1] = c_norm[ok]
        if (k + 1) in slot_of:
            states[:, slot_of[k + 1], :] = x_cur

    return EnsembleResult(
        times=times,
        record_nodes=record_nodes,
        states=states,
        failed=failed,
        failure_step=failure_step,
        max_constraint_residual=max_c,
        newton_iters_total=iters_total,
        newton_iters=newton_iters,
        constraint_residuals=c_resids,
    )


def integrate_inherent(
    prob: SdaeProblem,
    cfg: ThetaConfig,
    increments: np.ndarray,
) -> Trajectory:
    """Single-path inherent-SDE integration, reconstructed to X."""
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 2:
        raise ValueError("increments must have shape (n_steps, m)")
    ok, resid = check_initial_consistency(prob, tol=cfg.constraint_check_tol)
    if not ok:
        raise ValueError(f"initial value infeasible: residual {resid:.3e}")
    n_steps = increments.shape[0]
    out = integrate_inherent_ensemble(
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
