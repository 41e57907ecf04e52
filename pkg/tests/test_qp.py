"""Active-set QP solver: pinned KKT examples, a 1000-problem exhaustive
active-set enumeration oracle, and argmin invariances."""

import itertools

import numpy as np
import pytest

from dmpc.qp import (Infeasible, NotPositiveDefinite, QpProblem, solve_qp)


def enumeration_oracle(H, c, A, b, tol=1e-9):
    """Global minimum by brute force: solve the EQP for every subset of
    constraints of size <= m, keep the best KKT-consistent feasible point.

    Independent of the solver under test; dense lstsq only.
    """
    m = H.shape[0]
    k = A.shape[0]
    best = None
    for size in range(min(m, k) + 1):
        for subset in itertools.combinations(range(k), size):
            Aw = A[list(subset)]
            KKT = np.block([[H, Aw.T], [Aw, np.zeros((size, size))]])
            rhs = np.concatenate([-c, b[list(subset)]])
            try:
                sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
            except np.linalg.LinAlgError:
                continue
            # refine so constraint residuals stay machine-small even with
            # large multipliers; otherwise lambda^T r pollutes the objective
            ld = np.longdouble
            for _ in range(2):
                r = rhs.astype(ld) - KKT.astype(ld) @ sol.astype(ld)
                sol = sol + np.linalg.lstsq(
                    KKT, r.astype(float), rcond=None)[0]
            if np.abs(KKT @ sol - rhs).max() > 1e-7:
                continue  # singular working set
            u, lam = sol[:m], sol[m:]
            if np.any(lam < -tol):
                continue  # not dual feasible
            if k and np.max(A @ u - b) > 1e-8:
                continue  # not primal feasible
            obj = 0.5 * u @ H @ u + c @ u
            if best is None or obj < best[0] - 1e-12:
                best = (obj, u)
    return best


def rand_problem(rng):
    m = int(rng.integers(1, 6))
    k = int(rng.integers(0, 13))
    M = rng.normal(size=(m, m))
    H = M.T @ M + np.eye(m)
    c = rng.normal(size=m) * 2.0
    A = rng.normal(size=(k, m))
    b = rng.normal(size=k) + 0.5
    return QpProblem(H, c, A, b)


class TestExamples:
    def test_unconstrained_stationary_point(self):
        prob = QpProblem(2.0 * np.eye(2), np.array([-2.0, 0.0]),
                         np.zeros((0, 2)), np.zeros(0))
        sol = solve_qp(prob)
        np.testing.assert_allclose(sol.u_star, [1.0, 0.0], atol=1e-12)
        assert sol.active_set == []

    def test_single_active_constraint(self):
        prob = QpProblem(np.eye(1), np.array([-10.0]),
                         np.array([[1.0]]), np.array([1.0]))
        sol = solve_qp(prob)
        assert sol.u_star[0] == pytest.approx(1.0, abs=1e-10)
        assert sol.multipliers[0] == pytest.approx(9.0, abs=1e-8)
        assert sol.active_set == [0]

    def test_contradictory_constraints(self):
        prob = QpProblem(np.eye(1), np.zeros(1),
                         np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
        with pytest.raises(Infeasible):
            solve_qp(prob)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            solve_qp(QpProblem(np.array([[1.0, 0.0], [0.0, -1.0]]),
                               np.zeros(2), np.zeros((0, 2)), np.zeros(0)))

    def test_asymmetric_h_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            QpProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2),
                      np.zeros((0, 2)), np.zeros(0))


class TestKktCertificates:
    def check_kkt(self, prob, sol):
        r = prob.A @ sol.u_star - prob.b
        assert np.max(r, initial=-np.inf) <= 1e-9, "primal feasibility"
        lam = sol.multipliers
        assert np.all(lam >= -1e-12), "dual feasibility"
        stat = prob.H @ sol.u_star + prob.c + prob.A.T @ lam
        assert np.abs(stat).max() <= 1e-8, "stationarity"
        assert np.abs(lam * r).max(initial=0.0) <= 1e-8, \
            "complementary slackness"

    def test_random_problems_satisfy_kkt(self):
        rng = np.random.default_rng(42)
        solved = 0
        while solved < 200:
            prob = rand_problem(rng)
            try:
                sol = solve_qp(prob)
            except Infeasible:
                continue
            self.check_kkt(prob, sol)
            solved += 1


class TestOracleEquivalence:
    def test_thousand_problem_enumeration(self):
        # spec-level bar: objective within 1e-8 of exhaustive enumeration
        rng = np.random.default_rng(1234)
        compared = 0
        infeasible = 0
        while compared < 1000:
            prob = rand_problem(rng)
            want = enumeration_oracle(prob.H, prob.c, prob.A, prob.b)
            try:
                sol = solve_qp(prob)
            except Infeasible:
                assert want is None, "solver declared a solvable QP infeasible"
                infeasible += 1
                continue
            assert want is not None, "solver solved an infeasible QP"
            got = prob.objective(sol.u_star)
            assert got == pytest.approx(want[0], abs=1e-8), \
                f"objective mismatch at trial {compared}"
            compared += 1
        assert compared == 1000

    def test_objective_scaling_invariance(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 100:
            prob = rand_problem(rng)
            lam = float(rng.uniform(0.1, 50.0))
            scaled = QpProblem(lam * prob.H, lam * prob.c, prob.A, prob.b)
            try:
                u1 = solve_qp(prob).u_star
                u2 = solve_qp(scaled).u_star
            except Infeasible:
                continue
            np.testing.assert_allclose(u1, u2, atol=1e-9)
            checked += 1


class TestWarmStart:
    def test_feasible_x0_honored(self):
        # start on the constraint surface; the caller-supplied point must
        # not break optimality
        H = np.eye(2)
        prob = QpProblem(H, np.array([-4.0, 0.0]),
                         np.array([[1.0, 0.0]]), np.array([1.0]))
        sol = solve_qp(prob, x0=np.array([1.0, 0.0]))
        np.testing.assert_allclose(sol.u_star, [1.0, 0.0], atol=1e-10)
        assert sol.multipliers[0] == pytest.approx(3.0, abs=1e-8)

    def test_infeasible_x0_recovered(self):
        prob = QpProblem(np.eye(2), np.zeros(2),
                         np.array([[1.0, 0.0]]), np.array([-1.0]))
        sol = solve_qp(prob, x0=np.array([5.0, 0.0]))
        np.testing.assert_allclose(sol.u_star, [-1.0, 0.0], atol=1e-9)
