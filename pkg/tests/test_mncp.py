"""Solver tests: closed-form oracles, branch enumeration, random instances."""

import numpy as np
import pytest

from tumblesim.mncp import (
    MncpProblem,
    NonConvergence,
    SolverConfig,
    check_complementarity,
    fb_merit,
    solve,
)


def pure_ncp(fun, dim, jacobian=None):
    def residual(u, v):
        return np.zeros(v.shape[:-1] + (0,)), fun(v)

    jac = None
    if jacobian is not None:
        jac = lambda u, v: jacobian(v)
    return MncpProblem(dim_u=0, dim_v=dim, residual_fn=residual, jacobian_fn=jac)


class TestFbMerit:
    def test_root_at_origin(self):
        assert fb_merit(0.0, 0.0, 0.0) == 0.0

    def test_root_on_axis(self):
        assert fb_merit(3.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_closed_form_value(self):
        assert fb_merit(1.0, 1.0, 0.0) == pytest.approx(2.0 - np.sqrt(2.0), rel=1e-12)

    def test_zero_iff_complementary(self):
        rng = np.random.RandomState(7)
        for _ in range(500):
            a, b = rng.uniform(-2.0, 2.0, size=2)
            is_root = abs(fb_merit(a, b, 0.0)) < 1e-12
            is_comp = a >= -1e-12 and b >= -1e-12 and abs(a * b) < 1e-12
            assert is_root == is_comp

    def test_smoothing_shifts_value(self):
        assert fb_merit(0.0, 0.0, 1e-6) == pytest.approx(-1e-3, rel=1e-9)


class TestCheckComplementarity:
    def test_clean_pairs(self):
        assert check_complementarity([0.0, 2.0], [5.0, 0.0], 1e-10)

    def test_both_positive_fails(self):
        assert not check_complementarity([1.0], [1.0], 1e-10)

    def test_within_tolerance(self):
        assert check_complementarity([1e-12], [3.0], 1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            check_complementarity([1.0, 2.0], [1.0], 1e-10)


class TestOneDimensionalBranches:
    def test_negative_branch_forces_f_zero(self):
        # f(v) = v - 2: v = 0 gives f = -2 < 0, infeasible, so the solution
        # must sit on the other branch: f = 0 at v = 2
        problem = pure_ncp(lambda v: v - 2.0, 1)
        report = solve(problem, np.array([0.0]))
        assert report.converged
        assert report.solution[0] == pytest.approx(2.0, abs=1e-9)

    def test_positive_f_forces_v_zero(self):
        problem = pure_ncp(lambda v: v + 1.0, 1)
        report = solve(problem, np.array([0.5]))
        assert report.converged
        assert report.solution[0] == pytest.approx(0.0, abs=1e-9)

    def test_mixed_problem(self):
        # g(u, v) = u + v - 3 = 0 with 0 <= v perp 1 - u >= 0. The branch
        # v = 0 gives u = 3 and 1 - u < 0, infeasible; so u = 1, v = 2.
        def residual(u, v):
            return u + v - 3.0, 1.0 - u

        problem = MncpProblem(dim_u=1, dim_v=1, residual_fn=residual)
        report = solve(problem, np.array([0.0, 0.0]))
        assert report.converged
        np.testing.assert_allclose(report.solution, [1.0, 2.0], atol=1e-8)


def enumerate_lcp(A, b):
    """Brute-force solution of 0 <= v perp A v + b >= 0 by branch enumeration."""
    solutions = []
    n = len(b)
    for mask in range(2**n):
        free = [i for i in range(n) if mask & (1 << i)]
        v = np.zeros(n)
        if free:
            sub = A[np.ix_(free, free)]
            try:
                v[free] = np.linalg.solve(sub, -b[free])
            except np.linalg.LinAlgError:
                continue
        f = A @ v + b
        if (v >= -1e-9).all() and (f >= -1e-9).all():
            solutions.append(v)
    return solutions


class TestRandomInstances:
    def test_matches_enumeration_oracle(self):
        rng = np.random.RandomState(42)
        solved = 0
        for _ in range(100):
            raw = rng.uniform(-1.0, 1.0, size=(2, 2))
            A = raw @ raw.T + 0.5 * np.eye(2)  # positive definite: unique solution
            b = rng.uniform(-2.0, 2.0, size=2)
            oracle = enumerate_lcp(A, b)
            assert oracle, "positive definite LCP must have a solution"
            problem = pure_ncp(lambda v, A=A, b=b: v @ A.T + b, 2)
            report = solve(problem, rng.uniform(0.0, 1.0, size=2))
            assert report.converged
            gaps = [np.max(np.abs(report.solution - v)) for v in oracle]
            assert min(gaps) < 1e-6
            solved += 1
        assert solved == 100

    def test_converged_reports_satisfy_complementarity(self):
        rng = np.random.RandomState(3)
        config = SolverConfig()
        for _ in range(25):
            raw = rng.uniform(-1.0, 1.0, size=(3, 3))
            A = raw @ raw.T + 0.5 * np.eye(3)
            b = rng.uniform(-2.0, 2.0, size=3)
            problem = pure_ncp(lambda v, A=A, b=b: v @ A.T + b, 3)
            report = solve(problem, np.zeros(3))
            v = report.solution
            f = A @ v + b
            assert check_complementarity(v, f, 10.0 * config.residual_tolerance)


class TestJacobians:
    def test_analytic_matches_finite_differences(self):
        from tumblesim.mncp import FD_STEP, _fd_jacobian

        rng = np.random.RandomState(11)
        for _ in range(20):
            A = rng.uniform(-1.0, 1.0, size=(3, 3))
            b = rng.uniform(-1.0, 1.0, size=3)

            def residual(u, v, A=A, b=b):
                z = np.concatenate([u, v], axis=-1)
                smooth = np.sin(z) + z @ A.T + b
                return smooth[..., :2], smooth[..., 2:] ** 1

            def jacobian(u, v, A=A):
                z = np.concatenate([u, v])
                return np.diag(np.cos(z)) + A

            problem = MncpProblem(
                dim_u=2, dim_v=1, residual_fn=residual, jacobian_fn=jacobian
            )
            x = rng.uniform(-1.0, 1.0, size=3)
            s_u, s_v, s_x = problem.scales()
            fd = _fd_jacobian(problem, x, s_u, s_v, s_x)
            an = jacobian(x[:2], x[2:])
            assert np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1.0) < 1e-5

    def test_analytic_jacobian_path_solves(self):
        A = np.array([[2.0, 0.3], [0.3, 1.5]])
        b = np.array([-1.0, 0.5])
        problem = pure_ncp(
            lambda v: v @ A.T + b, 2, jacobian=lambda v: A
        )
        report = solve(problem, np.zeros(2))
        assert report.converged
        oracle = enumerate_lcp(A, b)
        assert min(np.max(np.abs(report.solution - v)) for v in oracle) < 1e-8


class TestSolverBehavior:
    def test_deterministic(self):
        A = np.array([[1.7, -0.2], [-0.2, 2.1]])
        b = np.array([-0.9, 0.4])
        problem = pure_ncp(lambda v: v @ A.T + b, 2)
        r1 = solve(problem, np.array([0.3, 0.3]))
        r2 = solve(problem, np.array([0.3, 0.3]))
        assert r1.iterations == r2.iterations
        assert r1.final_residual_norm == r2.final_residual_norm
        np.testing.assert_array_equal(r1.solution, r2.solution)

    def test_nonconvergence_carries_best_iterate(self):
        # f(v) = -1 - v^2 is always negative: infeasible by construction
        problem = pure_ncp(lambda v: -1.0 - v**2, 1)
        with pytest.raises(NonConvergence) as exc:
            solve(problem, np.array([0.0]), SolverConfig(max_iterations=15))
        report = exc.value.report
        assert not report.converged
        assert len(report.residual_history) >= 1
        assert report.solution.shape == (1,)

    def test_scaled_problem_converges_tight(self):
        # micro-scale numbers: impulse ~1e-10 against gap ~1e-4
        scale_p, scale_g = 1e-10, 1e-4

        def residual(u, v):
            g = u - 3.0e-10 * (1.0 + v / scale_g)
            f = v * 0.0 + scale_g * 0.5  # positive gap: forces v = 0
            return g, f

        problem = MncpProblem(
            dim_u=1,
            dim_v=1,
            residual_fn=residual,
            residual_scale_u=np.array([scale_p]),
            residual_scale_v=np.array([scale_g]),
            variable_scale=np.array([scale_p, scale_g]),
        )
        report = solve(problem, np.array([0.0, 0.0]))
        assert report.converged
        assert report.solution[0] == pytest.approx(3.0e-10, rel=1e-6)
        assert report.solution[1] == pytest.approx(0.0, abs=1e-12)

    def test_guess_length_checked(self):
        problem = pure_ncp(lambda v: v + 1.0, 2)
        with pytest.raises(ValueError):
            solve(problem, np.zeros(3))
