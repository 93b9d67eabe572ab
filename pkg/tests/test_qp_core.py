"""QP solver, KKT residuals, and active-set oracle."""

import numpy as np
import pytest

from ddpc.qp_core import (
    KktResiduals,
    QpProblem,
    QpSession,
    QpSolution,
    QpStatus,
    SolverOptions,
    brute_force_qp_oracle,
    kkt_residuals,
    solve_qp,
)

E = np.zeros((0, 0))
e0 = np.zeros(0)


def scalar_problem():
    # min 0.5 x^2 - x  -> x* = 1, objective -0.5
    return QpProblem(H=[[1.0]], f=[-1.0], A_eq=E, b_eq=e0, A_in=E, lb_in=e0, ub_in=e0)


def bound_problem():
    # min 0.5 x^2 s.t. x >= 2 -> x* = 2, multiplier 2
    return QpProblem(H=[[1.0]], f=[0.0], A_eq=E, b_eq=e0,
                     A_in=[[1.0]], lb_in=[2.0], ub_in=[np.inf])


def random_qp(rng, n, m_eq, m_in, strictly_convex=True):
    """Random PSD QP guaranteed feasible (bounds straddle a known point)."""
    M = rng.normal(size=(n, n))
    H = M.T @ M
    if strictly_convex:
        H += 0.5 * np.eye(n)
    f = rng.normal(size=n)
    x0 = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n)) if m_eq else np.zeros((0, n))
    b_eq = A_eq @ x0 if m_eq else np.zeros(0)
    A_in = rng.normal(size=(m_in, n)) if m_in else np.zeros((0, n))
    if m_in:
        mid = A_in @ x0
        lb = mid - rng.uniform(0.1, 2.0, size=m_in)
        ub = mid + rng.uniform(0.1, 2.0, size=m_in)
        # sprinkle some one-sided rows
        onesided = rng.random(m_in) < 0.3
        lb = np.where(onesided & (rng.random(m_in) < 0.5), -np.inf, lb)
        ub = np.where(onesided & ~np.isinf(lb), np.inf, ub)
    else:
        lb = ub = np.zeros(0)
    return QpProblem(H=H, f=f, A_eq=A_eq, b_eq=b_eq, A_in=A_in, lb_in=lb, ub_in=ub)


class TestProblemValidation:
    def test_asymmetric_h_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            QpProblem(H=[[1.0, 0.5], [0.0, 1.0]], f=[0.0, 0.0],
                      A_eq=E, b_eq=e0, A_in=E, lb_in=e0, ub_in=e0)

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError, match="lb_in > ub_in"):
            QpProblem(H=[[1.0]], f=[0.0], A_eq=E, b_eq=e0,
                      A_in=[[1.0]], lb_in=[1.0], ub_in=[-1.0])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            QpProblem(H=[[1.0]], f=[0.0, 0.0], A_eq=E, b_eq=e0,
                      A_in=E, lb_in=e0, ub_in=e0)
        with pytest.raises(ValueError):
            QpProblem(H=[[1.0]], f=[0.0], A_eq=[[1.0]], b_eq=[0.0, 1.0],
                      A_in=E, lb_in=e0, ub_in=e0)

    def test_psd_check_flags_indefinite(self):
        p = QpProblem(H=[[1.0, 0.0], [0.0, -1.0]], f=[0.0, 0.0],
                      A_eq=E, b_eq=e0, A_in=E, lb_in=e0, ub_in=e0)
        with pytest.raises(ValueError, match="PSD"):
            p.validate(check_psd=True)

    def test_psd_check_accepts_semidefinite(self):
        p = QpProblem(H=[[1.0, 0.0], [0.0, 0.0]], f=[0.0, 0.0],
                      A_eq=E, b_eq=e0, A_in=E, lb_in=e0, ub_in=e0)
        p.validate(check_psd=True)


class TestSolveExamples:
    def test_unconstrained_scalar(self):
        sol = solve_qp(scalar_problem())
        assert sol.status == QpStatus.Optimal
        assert sol.x_star[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.objective == pytest.approx(-0.5, abs=1e-8)

    def test_active_lower_bound_dual(self):
        sol = solve_qp(bound_problem())
        assert sol.status == QpStatus.Optimal
        assert sol.x_star[0] == pytest.approx(2.0, abs=1e-7)
        assert sol.dual_in[0] == pytest.approx(2.0, abs=1e-6)
        # signed convention: negative at a lower bound
        assert sol.dual_in_signed[0] == pytest.approx(-2.0, abs=1e-6)

    def test_six_variable_matches_oracle(self):
        rng = np.random.default_rng(123)
        p = random_qp(rng, n=6, m_eq=2, m_in=4)
        sol = solve_qp(p)
        ref = brute_force_qp_oracle(p)
        assert sol.status == QpStatus.Optimal
        assert ref.status == QpStatus.Optimal
        assert sol.objective == pytest.approx(ref.objective, abs=1e-6)
        np.testing.assert_allclose(sol.x_star, ref.x_star, atol=1e-5)

    def test_optimal_kkt_residuals_within_tolerance(self):
        from ddpc.qp_core import _kkt_scale

        rng = np.random.default_rng(7)
        for _ in range(20):
            p = random_qp(rng, n=5, m_eq=1, m_in=4)
            opts = SolverOptions()
            sol = solve_qp(p, opts)
            assert sol.status == QpStatus.Optimal
            res = kkt_residuals(p, sol)
            # the certified threshold is absolute plus relative to data scale
            scale = _kkt_scale(p, sol.x_star, sol.dual_eq, sol.dual_in_signed)
            assert res.max() <= opts.abs_tol + opts.rel_tol * scale
            # on unit-scale data that must still mean genuinely small
            assert res.max() <= 1e-6

    def test_infeasible_status_not_exception(self):
        # x <= -1 and x >= 1 cannot hold
        p = QpProblem(H=[[1.0]], f=[0.0], A_eq=E, b_eq=e0,
                      A_in=[[1.0], [1.0]], lb_in=[1.0, -np.inf], ub_in=[np.inf, -1.0])
        sol = solve_qp(p)
        assert sol.status == QpStatus.Infeasible

    def test_unbounded_reported_as_infeasible(self):
        # min -x with x >= 0: unbounded below
        p = QpProblem(H=[[0.0]], f=[-1.0], A_eq=E, b_eq=e0,
                      A_in=[[1.0]], lb_in=[0.0], ub_in=[np.inf])
        sol = solve_qp(p)
        assert sol.status == QpStatus.Infeasible

    def test_equality_only(self):
        # min 0.5||x||^2 s.t. x1 + x2 = 2 -> (1, 1)
        p = QpProblem(H=np.eye(2), f=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0],
                      A_in=E, lb_in=e0, ub_in=e0)
        sol = solve_qp(p)
        assert sol.status == QpStatus.Optimal
        np.testing.assert_allclose(sol.x_star, [1.0, 1.0], atol=1e-8)

    def test_max_iterations_respected(self):
        rng = np.random.default_rng(5)
        p = random_qp(rng, n=8, m_eq=2, m_in=6)
        sol = solve_qp(p, SolverOptions(max_iterations=10))
        assert sol.iterations <= 10
        assert sol.status in (QpStatus.MaxIter, QpStatus.Optimal)


class TestWarmStart:
    def test_warm_start_never_worse(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            p = random_qp(rng, n=6, m_eq=2, m_in=4)
            cold = solve_qp(p)
            warm = solve_qp(p, SolverOptions(warm_start=cold))
            assert warm.status == QpStatus.Optimal
            assert warm.objective <= cold.objective + 1e-6

    def test_warm_start_dimension_mismatch_ignored(self):
        p = scalar_problem()
        bogus = QpSolution(
            x_star=np.zeros(3), dual_eq=np.zeros(0), dual_in=np.zeros(0),
            objective=0.0, status=QpStatus.Optimal, iterations=0, solve_time=0.0)
        sol = solve_qp(p, SolverOptions(warm_start=bogus))
        assert sol.status == QpStatus.Optimal
        assert sol.x_star[0] == pytest.approx(1.0, abs=1e-8)


class TestSession:
    def test_vector_updates_match_fresh_solves(self):
        rng = np.random.default_rng(11)
        p = random_qp(rng, n=6, m_eq=2, m_in=4)
        session = QpSession(p)
        for _ in range(5):
            f_new = rng.normal(size=6)
            via_session = session.solve(f=f_new)
            fresh = solve_qp(QpProblem(p.H, f_new, p.A_eq, p.b_eq,
                                       p.A_in, p.lb_in, p.ub_in))
            assert via_session.status == QpStatus.Optimal
            np.testing.assert_allclose(via_session.x_star, fresh.x_star, atol=1e-6)

    def test_session_rejects_bad_lengths(self):
        p = random_qp(np.random.default_rng(0), n=4, m_eq=1, m_in=2)
        session = QpSession(p)
        with pytest.raises(ValueError):
            session.solve(f=np.zeros(5))


class TestKktResiduals:
    def test_exact_solution_zero_residuals(self):
        p = scalar_problem()
        sol = QpSolution(x_star=np.array([1.0]), dual_eq=e0, dual_in=e0,
                         objective=-0.5, status=QpStatus.Optimal,
                         iterations=0, solve_time=0.0)
        res = kkt_residuals(p, sol)
        assert res.max() == 0.0

    def test_perturbed_solution_stationarity(self):
        p = scalar_problem()
        sol = QpSolution(x_star=np.array([1.0 + 1e-3]), dual_eq=e0, dual_in=e0,
                         objective=0.0, status=QpStatus.Optimal,
                         iterations=0, solve_time=0.0)
        res = kkt_residuals(p, sol)
        assert res.stationarity == pytest.approx(1e-3, rel=1e-6)

    def test_oracle_solution_tiny_residuals(self):
        rng = np.random.default_rng(321)
        p = random_qp(rng, n=6, m_eq=2, m_in=4)
        ref = brute_force_qp_oracle(p)
        res = kkt_residuals(p, ref)
        assert res.max() <= 1e-10

    def test_dimension_mismatch(self):
        p = scalar_problem()
        sol = QpSolution(x_star=np.zeros(2), dual_eq=e0, dual_in=e0,
                         objective=0.0, status=QpStatus.Optimal,
                         iterations=0, solve_time=0.0)
        with pytest.raises(ValueError):
            kkt_residuals(p, sol)


class TestOracle:
    def test_unconstrained_scalar(self):
        ref = brute_force_qp_oracle(scalar_problem())
        assert ref.x_star[0] == pytest.approx(1.0, abs=1e-12)

    def test_lower_bound(self):
        ref = brute_force_qp_oracle(bound_problem())
        assert ref.x_star[0] == pytest.approx(2.0, abs=1e-12)
        assert ref.dual_in[0] == pytest.approx(2.0, abs=1e-12)

    def test_equality_symmetry(self):
        p = QpProblem(H=np.eye(2), f=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0],
                      A_in=E, lb_in=e0, ub_in=e0)
        ref = brute_force_qp_oracle(p)
        np.testing.assert_allclose(ref.x_star, [1.0, 1.0], atol=1e-12)

    def test_infeasible_detected(self):
        p = QpProblem(H=[[1.0]], f=[0.0], A_eq=E, b_eq=e0,
                      A_in=[[1.0], [1.0]], lb_in=[1.0, -np.inf], ub_in=[np.inf, -1.0])
        ref = brute_force_qp_oracle(p)
        assert ref.status == QpStatus.Infeasible

    def test_row_limit(self):
        n = 2
        A_in = np.ones((21, n))
        with pytest.raises(ValueError, match="m_in"):
            brute_force_qp_oracle(QpProblem(
                H=np.eye(n), f=np.zeros(n), A_eq=np.zeros((0, n)), b_eq=e0,
                A_in=A_in, lb_in=-np.ones(21), ub_in=np.ones(21)))


class TestProperties:
    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            m_eq = int(rng.integers(0, min(n, 3)))
            m_in = int(rng.integers(1, 7))
            p = random_qp(rng, n, m_eq, m_in)
            sol = solve_qp(p)
            ref = brute_force_qp_oracle(p)
            assert ref.status == QpStatus.Optimal
            assert sol.status == QpStatus.Optimal
            assert abs(sol.objective - ref.objective) <= 1e-6
            np.testing.assert_allclose(sol.x_star, ref.x_star, atol=1e-5)

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(99)
        p = random_qp(rng, n=7, m_eq=2, m_in=5)
        a = solve_qp(p)
        b = solve_qp(p)
        assert np.array_equal(a.x_star, b.x_star)
        assert np.array_equal(a.dual_eq, b.dual_eq)
        assert np.array_equal(a.dual_in, b.dual_in)
        assert a.objective == b.objective
        assert a.iterations == b.iterations

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolverOptions(abs_tol=0.0)
        with pytest.raises(ValueError):
            SolverOptions(max_iterations=0)
        with pytest.raises(ValueError):
            SolverOptions(time_limit=0.0)
