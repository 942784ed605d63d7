"""Newton solver tests with independent root oracles (bisection, elimination)."""

import math

import numpy as np

from sdae_theta.newton import NewtonConfig, newton_solve, newton_solve_batch


def bisect(fn, lo, hi, tol=1e-12, max_iter=200):
    flo = fn(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if abs(hi - lo) < tol:
            return mid
        if (flo < 0) == (fmid < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestScalarSolve:
    def test_affine_one_iteration(self):
        out = newton_solve(lambda x: x - 2.0, lambda x: np.eye(1), np.array([0.0]))
        assert out.converged
        assert out.iterations == 1
        assert np.allclose(out.solution, 2.0)

    def test_cube_root_matches_bisection(self):
        out = newton_solve(
            lambda x: x**3 - 8.0,
            lambda x: np.atleast_2d(3.0 * x[0] ** 2),
            np.array([1.0]),
        )
        root = bisect(lambda v: v**3 - 8.0, 0.0, 4.0)
        assert out.converged
        assert abs(out.solution[0] - root) <= 1e-5

    def test_2d_system_matches_elimination_oracle(self):
        # x1^2 - x2 = 0, x2 - 4 = 0: eliminate x2 and bisect x1^2 = 4.
        def residual(x):
            return np.array([x[0] ** 2 - x[1], x[1] - 4.0])

        def jacobian(x):
            return np.array([[2.0 * x[0], -1.0], [0.0, 1.0]])

        out = newton_solve(residual, jacobian, np.array([1.5, 3.0]))
        x1 = bisect(lambda v: v**2 - 4.0, 0.0, 10.0)
        assert out.converged
        assert np.allclose(out.solution, [x1, 4.0], atol=1e-6)

    def test_linear_system_one_iteration(self):
        rng = np.random.default_rng(3)
        b_mat = rng.normal(size=(4, 4)) + 4.0 * np.eye(4)
        c = rng.normal(size=4)
        out = newton_solve(
            lambda x: b_mat @ x - c, lambda x: b_mat, np.zeros(4)
        )
        assert out.converged
        assert out.iterations == 1
        assert np.max(np.abs(b_mat @ out.solution - c)) <= 1e-10

    def test_quadratic_local_convergence(self):
        # From 2.1 every full step is accepted without backtracking, so the
        # recorded evaluations are exactly the accepted iterates.
        norms = []

        def residual(x):
            norms.append(abs(x[0] ** 3 - 8.0))
            return x**3 - 8.0

        newton_solve(
            residual,
            lambda x: np.atleast_2d(3.0 * x[0] ** 2),
            np.array([2.1]),
            NewtonConfig(tol=1e-12),
        )
        seq = norms[1:]  # norms[0] is the wrapper's shape-probe call
        for prev, nxt in zip(seq, seq[1:4]):
            assert nxt <= 0.5 * prev * prev + 1e-15

    def test_backtracking_never_increases_residual(self):
        # atan from 3.0 is the classic diverging start for undamped Newton;
        # rerunning with growing iteration caps exposes the per-iteration
        # accepted residuals, which must be nonincreasing.
        def residual(x):
            return np.array([math.atan(x[0])])

        def jacobian(x):
            return np.atleast_2d(1.0 / (1.0 + x[0] ** 2))

        prev = abs(math.atan(3.0))
        for max_iter in range(1, 8):
            out = newton_solve(
                residual,
                jacobian,
                np.array([3.0]),
                NewtonConfig(tol=1e-14, max_iter=max_iter),
            )
            assert out.final_residual_norm <= prev + 1e-15
            prev = out.final_residual_norm
        assert prev <= 1e-9

    def test_max_iter_reports_honest_failure(self):
        out = newton_solve(
            lambda x: np.array([math.atan(x[0])]),
            lambda x: np.atleast_2d(1.0 / (1.0 + x[0] ** 2)),
            np.array([50.0]),
            NewtonConfig(tol=1e-12, max_iter=2),
        )
        assert not out.converged

    def test_nan_residual_fails_immediately(self):
        out = newton_solve(
            lambda x: np.array([float("nan")]),
            lambda x: np.eye(1),
            np.array([1.0]),
        )
        assert not out.converged
        assert out.iterations == 0

    def test_zero_row_with_zero_residual_pins_component(self):
        # Second equation is vacuous: step must leave x2 at its start value.
        def residual(x):
            return np.array([x[0] - 1.0, 0.0])

        def jacobian(x):
            return np.array([[1.0, 0.0], [0.0, 0.0]])

        out = newton_solve(residual, jacobian, np.array([5.0, 7.0]))
        assert out.converged
        assert np.allclose(out.solution, [1.0, 7.0])

    def test_zero_row_with_nonzero_residual_fails(self):
        def residual(x):
            return np.array([x[0] - 1.0, 0.5])

        def jacobian(x):
            return np.array([[1.0, 0.0], [0.0, 0.0]])

        out = newton_solve(residual, jacobian, np.array([5.0, 7.0]))
        assert not out.converged


class TestBatchSolve:
    def test_batch_matches_individual_runs(self):
        def residual(x):
            return np.stack([x[:, 0] ** 3 - x[:, 1], x[:, 1] - 2.0], axis=-1)

        def jacobian(x):
            jac = np.zeros(x.shape[:-1] + (2, 2))
            jac[:, 0, 0] = 3.0 * x[:, 0] ** 2
            jac[:, 0, 1] = -1.0
            jac[:, 1, 1] = 1.0
            return jac

        inits = np.array([[1.0, 1.0], [2.0, 3.0], [0.7, 0.2], [1.4, 2.0]])
        batch = newton_solve_batch(residual, jacobian, inits)
        for i, x0 in enumerate(inits):
            single = newton_solve_batch(residual, jacobian, x0[None, :])
            assert np.array_equal(single.solution[0], batch.solution[i])
            assert single.iterations[0] == batch.iterations[i]
        assert np.all(batch.converged)

    def test_per_row_failure_isolation(self):
        # Row 1 diverges to NaN immediately; row 0 must still converge.
        def residual(x):
            out = np.stack([x[:, 0] - 2.0], axis=-1)
            out[x[:, 0] > 100.0] = np.nan
            return out

        def jacobian(x):
            return np.ones(x.shape[:-1] + (1, 1))

        batch = newton_solve_batch(
            residual, jacobian, np.array([[0.0], [200.0]])
        )
        assert batch.converged[0]
        assert not batch.converged[1]
        assert np.allclose(batch.solution[0], 2.0)
