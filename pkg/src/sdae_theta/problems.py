"""SDAE problem models: coefficients, Jacobians, assumption constants, built-ins.

A problem describes ``A(t) dX = F(t,X) dt + G(t,X) dW`` on ``[0, horizon]``.
Coefficient callables must be vectorized over leading axes: ``f_drift(t, x)``
maps ``(..., d) -> (..., d)``, ``f_jacobian`` maps ``(..., d) -> (..., d, d)``
and ``g_diffusion`` maps ``(..., d) -> (..., d, m)``.  The Monte Carlo layer
relies on this to evaluate whole path ensembles in one call.  ``a_of_t``
takes a scalar time and returns the ``(d, d)`` matrix.

Coefficient functions must be pure; problems are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import projectors


@dataclass(frozen=True)
class ProblemConstants:
    """Declared assumption constants, used by guards and probes.

    ``p1 > 4*gamma - 2`` is enforced.  ``coupling_l2``/``p2`` are optional
    (the coupled form is not needed for constant constraint matrices) and
    ``jacobian_bound_lj``/``lhat`` are optional because a degenerate
    constraint row (identically zero) has no bounded-inverse Jacobian.
    """

    rank_r: int
    sigma_lo: float
    sigma_hi: float
    monotonicity_l1: float
    gamma: float
    p1: float
    jacobian_bound_lj: Optional[float] = None
    lhat: Optional[float] = None
    coupling_l2: Optional[float] = None
    p2: Optional[float] = None

    def __post_init__(self):
        if self.p1 <= 4.0 * self.gamma - 2.0:
            raise ValueError(
                f"moment exponent p1={self.p1} must exceed 4*gamma-2={4*self.gamma-2}"
            )
        if not (0 < self.sigma_lo <= self.sigma_hi):
            raise ValueError("need 0 < sigma_lo <= sigma_hi")
        if self.rank_r < 1:
            raise ValueError("rank_r must be at least 1")
        if self.monotonicity_l1 <= 0 or self.gamma < 1:
            raise ValueError("need monotonicity_l1 > 0 and gamma >= 1")


@dataclass(frozen=True)
class SdaeProblem:
    """An index-1 SDAE with analytic drift Jacobian and declared constants."""

    label: str
    d: int
    m: int
    horizon: float
    a_of_t: Callable[[float], np.ndarray]
    f_drift: Callable[[float, np.ndarray], np.ndarray]
    f_jacobian: Callable[[float, np.ndarray], np.ndarray]
    g_diffusion: Callable[[float, np.ndarray], np.ndarray]
    x0: np.ndarray
    constants: ProblemConstants

    def __post_init__(self):
        if not (0 < self.horizon < math.inf):
            raise ValueError("horizon must be positive and finite")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.d,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({self.d},)")
        object.__setattr__(self, "x0", x0)


def constraint_residual(prob: SdaeProblem, t: float, x: np.ndarray) -> np.ndarray:
    """Algebraic residual ``R_t F(t, x)``; zero iff ``x`` is feasible at ``t``."""
    bundle = projectors(prob.a_of_t(t))
    return prob.f_drift(t, np.asarray(x, dtype=float)) @ bundle.r_proj.T


def check_initial_consistency(prob: SdaeProblem, tol: float = 1e-12) -> tuple[bool, float]:
    """Whether ``R F(0, x0) = 0`` holds to ``tol`` (max-norm); returns (ok, norm)."""
    resid = constraint_residual(prob, 0.0, prob.x0)
    norm = float(np.max(np.abs(resid))) if resid.size else 0.0
    return norm <= tol, norm


# ---------------------------------------------------------------------------
# Built-in problems
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def _ex51_a(t: float) -> np.ndarray:
    s = (t * t + 1.0) / _SQRT2
    return np.array([[0.0, 0.0], [-s, s]])


def _ex51_drift(t: float, x: np.ndarray) -> np.ndarray:
    u = x[..., 0] - x[..., 1]
    return np.stack(
        [x[..., 0] + x[..., 1] + math.sin(t), u**3 - u + 1.0],
        axis=-1,
    )


def _ex51_jac(t: float, x: np.ndarray) -> np.ndarray:
    u = x[..., 0] - x[..., 1]
    s = 3.0 * u * u - 1.0
    jac = np.empty(x.shape[:-1] + (2, 2))
    jac[..., 0, 0] = 1.0
    jac[..., 0, 1] = 1.0
    jac[..., 1, 0] = s
    jac[..., 1, 1] = -s
    return jac


def _ex51_diffusion(t: float, x: np.ndarray) -> np.ndarray:
    b = 0.2
    u = x[..., 0] - x[..., 1]
    g = np.zeros(x.shape[:-1] + (2, 2))
    g[..., 1, 0] = b * (x[..., 0] + x[..., 1] + 1.0)
    g[..., 1, 1] = b * u * u + 2.0 * b
    return g


def _ex52_a(t: float) -> np.ndarray:
    return np.diag([0.5 / (t * t + 1.0), 10.0, 0.0])


def _ex52_drift(t: float, x: np.ndarray) -> np.ndarray:
    return np.stack(
        [-x[..., 0] ** 3, x[..., 2], x[..., 1] * t + x[..., 2]],
        axis=-1,
    )


def _ex52_jac(t: float, x: np.ndarray) -> np.ndarray:
    jac = np.zeros(x.shape[:-1] + (3, 3))
    jac[..., 0, 0] = -3.0 * x[..., 0] ** 2
    jac[..., 1, 2] = 1.0
    jac[..., 2, 1] = t
    jac[..., 2, 2] = 1.0
    return jac


def _ex52_diffusion(t: float, x: np.ndarray) -> np.ndarray:
    c = 0.1
    g = np.zeros(x.shape[:-1] + (3, 3))
    g[..., 0, 0] = math.sin(t)
    g[..., 1, 1] = c * x[..., 0] ** 2
    return g


def _remark31_a(t: float) -> np.ndarray:
    return np.diag([0.5, 10.0, 0.0])


def _remark31_drift(t: float, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[..., 0] = -x[..., 0] ** 3
    return out


def _remark31_jac(t: float, x: np.ndarray) -> np.ndarray:
    jac = np.zeros(x.shape[:-1] + (3, 3))
    jac[..., 0, 0] = -3.0 * x[..., 0] ** 2
    return jac


def _remark31_diffusion(t: float, x: np.ndarray) -> np.ndarray:
    g = np.zeros(x.shape[:-1] + (3, 3))
    g[..., 1, 1] = x[..., 0] ** 2
    return g


def _linear_a(t: float) -> np.ndarray:
    return np.array([[1.0]])


def _linear_drift(t: float, x: np.ndarray) -> np.ndarray:
    return -x


def _linear_jac(t: float, x: np.ndarray) -> np.ndarray:
    jac = np.empty(x.shape[:-1] + (1, 1))
    jac[..., 0, 0] = -1.0
    return jac


def _linear_diffusion(t: float, x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[:-1] + (1, 0))


def _make_example51() -> SdaeProblem:
    # 2-D system, rank-1 A(t); drift parameters a = 1, b = 1/5.  With
    # p1 = 11 the one-sided bound works out to L1 = 2*(a + (p1-1) b^2).
    lj = math.sqrt(1.5)
    sup_a = 2.0  # |A(t)|_F = t^2 + 1 on [0, 1]
    l1 = 2.0 * (1.0 + 10.0 * 0.04)
    return SdaeProblem(
        label="example51",
        d=2,
        m=2,
        horizon=1.0,
        a_of_t=_ex51_a,
        f_drift=_ex51_drift,
        f_jacobian=_ex51_jac,
        g_diffusion=_ex51_diffusion,
        x0=np.array([1.0, -1.0]),
        constants=ProblemConstants(
            rank_r=1,
            sigma_lo=1.0,
            sigma_hi=2.0,
            monotonicity_l1=l1,
            gamma=3.0,
            p1=11.0,
            jacobian_bound_lj=lj,
            lhat=sup_a * lj + 2.0,
            coupling_l2=4.0 * l1,  # rank 1: L2 = sigma_hi^2 * L1, p2 = p1 - 1
            p2=10.0,
        ),
    )


def _make_example52() -> SdaeProblem:
    lj = 8.0  # 2(T^2+1) + 2(T+1) at T = 1
    sup_a = math.sqrt(0.25 + 100.0)  # |A(t)|_F maximal at t = 0
    return SdaeProblem(
        label="example52",
        d=3,
        m=3,
        horizon=1.0,
        a_of_t=_ex52_a,
        f_drift=_ex52_drift,
        f_jacobian=_ex52_jac,
        g_diffusion=_ex52_diffusion,
        x0=np.array([1.0, -1.0, 0.0]),
        constants=ProblemConstants(
            rank_r=2,
            sigma_lo=0.25,
            sigma_hi=10.0,
            monotonicity_l1=0.1,
            gamma=3.0,
            p1=21.0,
            jacobian_bound_lj=lj,
            lhat=sup_a * lj + 3.0,
            coupling_l2=10.0,
            p2=25.0,
        ),
    )


def _make_remark31() -> SdaeProblem:
    # Constant-matrix counterexample: the coupled one-sided form is
    # unbounded, so no (L2, p2) is declared.  The third constraint row is
    # identically 0 = 0, hence no bounded-inverse Jacobian exists either;
    # the initial value fixes the free algebraic component to zero.
    return SdaeProblem(
        label="remark31",
        d=3,
        m=3,
        horizon=1.0,
        a_of_t=_remark31_a,
        f_drift=_remark31_drift,
        f_jacobian=_remark31_jac,
        g_diffusion=_remark31_diffusion,
        x0=np.array([1.0, 0.0, 0.0]),
        constants=ProblemConstants(
            rank_r=2,
            sigma_lo=0.5,
            sigma_hi=10.0,
            monotonicity_l1=0.1,  # one-sided form is <= 0; any positive bound works
            gamma=3.0,
            p1=11.0,
        ),
    )


def _make_linear_sanity() -> SdaeProblem:
    # d = 1, A = 1, F = -x, G = 0: closed-form validation target.
    return SdaeProblem(
        label="linear_sanity",
        d=1,
        m=0,
        horizon=1.0,
        a_of_t=_linear_a,
        f_drift=_linear_drift,
        f_jacobian=_linear_jac,
        g_diffusion=_linear_diffusion,
        x0=np.array([1.0]),
        constants=ProblemConstants(
            rank_r=1,
            sigma_lo=1.0,
            sigma_hi=1.0,
            monotonicity_l1=1.0,  # form is -2|x-y|^2; any positive bound works
            gamma=1.0,
            p1=8.0,
            jacobian_bound_lj=1.0,
            lhat=2.0,
            coupling_l2=1.0,
            p2=2.0,
        ),
    )


_BUILTINS: dict[str, Callable[[], SdaeProblem]] = {
    "example51": _make_example51,
    "example52": _make_example52,
    "remark31": _make_remark31,
    "linear_sanity": _make_linear_sanity,
}

BUILTIN_LABELS = tuple(sorted(_BUILTINS))


def builtin(label: str) -> SdaeProblem:
    """Look up a built-in problem by label.

    Raises ``KeyError`` naming the valid labels for an unknown one.
    """
    try:
        factory = _BUILTINS[label]
    except KeyError:
        raise KeyError(
            f"unknown problem {label!r}; valid labels: {', '.join(BUILTIN_LABELS)}"
        ) from None
    return factory()


# ---------------------------------------------------------------------------
# Empirical assumption probes and self-checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeReport:
    """Empirical maxima of the two one-sided quadratic forms over samples.

    ``l1_hat`` estimates the coupled monotonicity constant (projected form
    with the pseudo-inverse); ``l2_hat`` the constraint-matrix-coupled form
    using ``p2_used``.  A probe samples, so it can refute a declared bound
    but never prove one.
    """

    l1_hat: float
    l2_hat: float
    p2_used: float
    n_samples: int
    box_radius: float


def probe_assumptions(
    prob: SdaeProblem,
    n_samples: int = 1000,
    box_radius: float = 2.0,
    seed: int = 0,
) -> ProbeReport:
    """Sample the monotonicity forms on random (t, x, y) triples."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    p1 = prob.constants.p1
    p2 = prob.constants.p2 if prob.constants.p2 is not None else 1.0
    n_t = min(32, n_samples)
    per_t = -(-n_samples // n_t)  # ceil
    l1_hat = -math.inf
    l2_hat = -math.inf
    for t in rng.uniform(0.0, prob.horizon, size=n_t):
        t = float(t)
        bundle = projectors(prob.a_of_t(t))
        x = rng.uniform(-box_radius, box_radius, size=(per_t, prob.d))
        y = rng.uniform(-box_radius, box_radius, size=(per_t, prob.d))
        gap2 = np.sum((x - y) ** 2, axis=-1)
        keep = gap2 > 1e-20
        if not np.any(keep):
            continue
        x, y, gap2 = x[keep], y[keep], gap2[keep]
        df = prob.f_drift(t, x) - prob.f_drift(t, y)
        dg = prob.g_diffusion(t, x) - prob.g_diffusion(t, y)

        df_pinv = df @ bundle.a_pinv.T
        dg_pinv = np.einsum("ij,njm->nim", bundle.a_pinv, dg)
        form1 = 2.0 * np.sum(((x - y) @ bundle.p.T) * df_pinv, axis=-1)
        form1 += (p1 - 1.0) * np.sum(dg_pinv**2, axis=(-2, -1))
        l1_hat = max(l1_hat, float(np.max(form1 / gap2)))

        form2 = 2.0 * np.sum(((x - y) @ bundle.a.T) * df, axis=-1)
        form2 += p2 * np.sum(dg**2, axis=(-2, -1))
        l2_hat = max(l2_hat, float(np.max(form2 / gap2)))
    return ProbeReport(
        l1_hat=l1_hat,
        l2_hat=l2_hat,
        p2_used=p2,
        n_samples=n_samples,
        box_radius=box_radius,
    )


def jacobian_fd_error(
    prob: SdaeProblem,
    n_samples: int = 100,
    box_radius: float = 2.0,
    seed: int = 0,
) -> float:
    """Max relative mismatch between the analytic Jacobian and central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        t = float(rng.uniform(0.0, prob.horizon))
        x = rng.uniform(-box_radius, box_radius, size=prob.d)
        h = 1e-5 * (1.0 + float(np.linalg.norm(x)))
        fd = np.empty((prob.d, prob.d))
        for j in range(prob.d):
            e = np.zeros(prob.d)
            e[j] = h
            fd[:, j] = (prob.f_drift(t, x + e) - prob.f_drift(t, x - e)) / (2.0 * h)
        jac = prob.f_jacobian(t, x)
        err = np.linalg.norm(fd - jac) / (1.0 + np.linalg.norm(jac))
        worst = max(worst, float(err))
    return worst


def index1_jacobian_norm(prob: SdaeProblem, t: float, x: np.ndarray) -> float:
    """Frobenius norm of ``J(t,x)^{-1}`` where ``J = A_t + R F'_x`` (the (A2) check)."""
    bundle = projectors(prob.a_of_t(t))
    j = bundle.a + bundle.r_proj @ prob.f_jacobian(t, np.asarray(x, dtype=float))
    return float(np.linalg.norm(np.linalg.inv(j)))
