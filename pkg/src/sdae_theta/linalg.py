"""Small dense real linear algebra: SVD, pseudo-inverse, projectors, pivoted solves.

Everything here works on plain ``numpy.ndarray`` values (shape ``(d, d)``
matrices and ``(d,)`` vectors) and is sized for the tiny systems this
package deals in (d <= 10 or so).  All matrix norms are Frobenius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RANK_TOL = 1e-10

# Pivot smaller than this times the matrix scale is treated as singular.
PIVOT_TOL = 1e-13


class SingularMatrixError(ValueError):
    """Linear solve hit a pivot that is zero to tolerance.

    Carries the offending pivot magnitude in ``pivot``.
    """

    def __init__(self, pivot: float, column: int):
        self.pivot = float(pivot)
        self.column = int(column)
        super().__init__(
            f"matrix is singular to tolerance: pivot {pivot:.3e} in column {column}"
        )


@dataclass(frozen=True)
class SvdFactors:
    """Factorization ``a = left @ diag(singular_values) @ right``.

    ``left`` and ``right`` are orthogonal d x d matrices and the singular
    values are sorted in nonincreasing order.  ``rank`` counts singular
    values above the relative cutoff used at construction time.
    """

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray
    rank: int


@dataclass(frozen=True)
class ProjectorBundle:
    """A square matrix ``a`` with its pseudo-inverse and the three projectors.

    * ``p = a_pinv @ a`` projects along Ker(a),
    * ``q = I - p`` projects onto Ker(a)  (so ``a @ q = 0``),
    * ``r_proj = I - a @ a_pinv`` projects along Im(a)  (so ``r_proj @ a = 0``).

    ``ker_basis`` holds orthonormal columns spanning Ker(a) and
    ``coker_basis`` orthonormal columns spanning Im(r_proj); both have
    ``d - rank`` columns.  They come straight from the SVD factors, so their
    signs/ordering are not stable across nearby matrices -- downstream code
    must only rely on the projectors themselves.
    """

    a: np.ndarray
    a_pinv: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r_proj: np.ndarray
    rank: int
    ker_basis: np.ndarray
    coker_basis: np.ndarray


def _as_square(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def svd(a: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> SvdFactors:
    """Full SVD of a square matrix with a relative rank decision.

    The numerical rank is the number of singular values exceeding
    ``rank_tol * sigma_max``; a zero matrix has rank 0.
    """
    a = _as_square(a)
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    left, sigma, right = np.linalg.svd(a)
    smax = sigma[0] if sigma.size else 0.0
    rank = int(np.count_nonzero(sigma > rank_tol * smax)) if smax > 0 else 0
    return SvdFactors(left=left, singular_values=sigma, right=right, rank=rank)


def pinv(f: SvdFactors) -> np.ndarray:
    """Moore-Penrose pseudo-inverse from SVD factors.

    Inverts the ``rank`` leading singular values and zeros the rest; a rank-0
    input yields the zero matrix.
    """
    d = f.singular_values.shape[0]
    inv = np.zeros(d)
    r = f.rank
    inv[:r] = 1.0 / f.singular_values[:r]
    return (f.right.T * inv) @ f.left.T


def projectors(a: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectorBundle:
    """Pseudo-inverse and the projectors P, Q, R of a square matrix.

    P, Q and R are built from the SVD factors directly (sums of outer
    products of singular vectors), which keeps them symmetric and idempotent
    to machine precision even when ``a`` is rank deficient.
    """
    a = _as_square(a)
    f = svd(a, rank_tol)
    d = a.shape[0]
    r = f.rank
    a_pinv = pinv(f)
    rows = f.right[:r]           # first r rows of N: row space basis
    cols = f.left[:, :r]         # first r columns of M: column space basis
    p = rows.T @ rows
    q = np.eye(d) - p
    r_proj = np.eye(d) - cols @ cols.T
    return ProjectorBundle(
        a=a,
        a_pinv=a_pinv,
        p=p,
        q=q,
        r_proj=r_proj,
        rank=r,
        ker_basis=f.right[r:].T.copy(),
        coker_basis=f.left[:, r:].copy(),
    )


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``PIVOT_TOL`` times the largest entry of ``a``.
    """
    a = _as_square(a)
    b = np.asarray(b, dtype=float)
    d = a.shape[0]
    if b.shape != (d,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({d},)")
    lu = a.copy()
    x = b.copy()
    scale = np.max(np.abs(a))
    threshold = PIVOT_TOL * max(scale, 1e-300)
    for j in range(d):
        piv = j + int(np.argmax(np.abs(lu[j:, j])))
        pivot = abs(lu[piv, j])
        if pivot <= threshold:
            raise SingularMatrixError(pivot, j)
        if piv != j:
            lu[[j, piv]] = lu[[piv, j]]
            x[[j, piv]] = x[[piv, j]]
        factors = lu[j + 1 :, j] / lu[j, j]
        lu[j + 1 :, j:] -= factors[:, None] * lu[j, j:]
        x[j + 1 :] -= factors * x[j]
    for j in range(d - 1, -1, -1):
        x[j] = (x[j] - lu[j, j + 1 :] @ x[j + 1 :]) / lu[j, j]
    return x


def pinv_solve(a: np.ndarray, b: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ x = b`` via the SVD.

    Used as the fallback when a Newton Jacobian is rank deficient; the
    minimum-norm property keeps null-space components of the step at zero.
    """
    a = _as_square(a)
    return pinv(svd(a, rank_tol)) @ np.asarray(b, dtype=float)
