"""Solver correctness against independent oracles.

Two routes are held together: the active-set implementation under test, and
(a) exhaustive active-set enumeration through KKT systems for small
problems, (b) stationarity/feasibility/complementarity residuals plus an LP
feasibility certificate for larger ones.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from mergesim import qpsolver
from mergesim.qpsolver import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    QPProblem,
    QPSolution,
    QPStructureError,
    WarmStart,
    kkt_residual,
    solve,
)


def _objective(problem: QPProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ problem.hessian @ x + problem.gradient @ x)


def _all_rows(problem: QPProblem):
    """Every constraint as (row, bound), boxes included."""
    rows = [
        (problem.ineq_coeffs[r], problem.ineq_bounds[r]) for r in range(problem.m)
    ]
    n = problem.n
    for i in range(n):
        if np.isfinite(problem.lower[i]):
            e = np.zeros(n)
            e[i] = 1.0
            rows.append((e, problem.lower[i]))
        if np.isfinite(problem.upper[i]):
            e = np.zeros(n)
            e[i] = -1.0
            rows.append((e, -problem.upper[i]))
    return rows


def _feasible(problem: QPProblem, x: np.ndarray, tol: float = 1e-8) -> bool:
    for row, bound in _all_rows(problem):
        if row @ x < bound - tol:
            return False
    return True


def enumeration_oracle(problem: QPProblem):
    """Exact optimum of a strictly convex QP by trying every candidate
    active set; independent of the solver under test."""
    H, g = problem.hessian, problem.gradient
    n = H.shape[0]
    rows = _all_rows(problem)
    best_x = None
    best_obj = math.inf
    x_free = np.linalg.solve(H, -g)
    if _feasible(problem, x_free):
        best_x, best_obj = x_free, _objective(problem, x_free)
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(len(rows)), size):
            aw = np.stack([rows[j][0] for j in subset])
            bw = np.array([rows[j][1] for j in subset])
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = H
            kkt[:n, n:] = -aw.T
            kkt[n:, :n] = aw
            rhs = np.concatenate([-g, bw])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if lam.min() < -1e-9 or not _feasible(problem, x, tol=1e-7):
                continue
            obj = _objective(problem, x)
            if obj < best_obj - 1e-12:
                best_x, best_obj = x, obj
    return best_x, best_obj


def random_problem(rng: np.random.Generator, n: int, m: int, feasible_bias=True) -> QPProblem:
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = rng.uniform(0.2, 8.0, size=n)
    H = q @ np.diag(eigs) @ q.T
    H = 0.5 * (H + H.T)
    g = rng.normal(scale=3.0, size=n)
    A = rng.normal(size=(m, n))
    anchor = rng.normal(scale=2.0, size=n)
    slack = rng.uniform(0.0, 2.0, size=m) if feasible_bias else rng.uniform(-2.0, 2.0, size=m)
    b = A @ anchor - slack
    lower = anchor - rng.uniform(0.5, 4.0, size=n)
    upper = anchor + rng.uniform(0.5, 4.0, size=n)
    loose_lo = rng.random(n) < 0.3
    loose_hi = rng.random(n) < 0.3
    lower[loose_lo] = -np.inf
    upper[loose_hi] = np.inf
    return QPProblem(H, g, A, b, lower, upper)


class TestTinyExamples:
    def test_box_only_clamp(self):
        p = QPProblem([[2.0]], [-6.0], np.zeros((0, 1)), [], [-np.inf], [2.0])
        sol = solve(p)
        assert sol.status == OPTIMAL
        assert sol.u[0] == pytest.approx(2.0, abs=1e-10)
        assert sol.duals[1] == pytest.approx(2.0, abs=1e-8)

    def test_unconstrained_interior(self):
        p = QPProblem(np.diag([2.0, 4.0]), [-2.0, -8.0], np.zeros((0, 2)), [],
                      [-10, -10], [10, 10])
        sol = solve(p)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.u, [1.0, 2.0], atol=1e-10)
        assert np.all(sol.duals == 0.0)

    def test_single_active_row(self):
        # min (x-1)^2 + (y-1)^2  s.t.  x + y >= 3  ->  (1.5, 1.5)
        p = QPProblem(np.eye(2) * 2, [-2.0, -2.0], [[1.0, 1.0]], [3.0],
                      [-np.inf, -np.inf], [np.inf, np.inf])
        sol = solve(p)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.u, [1.5, 1.5], atol=1e-9)
        assert sol.duals[0] == pytest.approx(1.0, abs=1e-8)

    def test_infeasible_box(self):
        p = QPProblem([[2.0]], [0.0], np.zeros((0, 1)), [], [1.0], [0.0])
        assert solve(p).status == INFEASIBLE

    def test_infeasible_rows(self):
        # x >= 1 and -x >= 1 cannot hold
        p = QPProblem([[2.0]], [0.0], [[1.0], [-1.0]], [1.0, 1.0],
                      [-np.inf], [np.inf])
        sol = solve(p)
        assert sol.status == INFEASIBLE
        assert sol.max_violation > 0.5

    def test_zero_row_infeasible(self):
        p = QPProblem([[2.0]], [0.0], [[0.0]], [1.0], [-np.inf], [np.inf])
        assert solve(p).status == INFEASIBLE

    def test_zero_row_vacuous(self):
        p = QPProblem([[2.0]], [-2.0], [[0.0]], [-1.0], [-np.inf], [np.inf])
        sol = solve(p)
        assert sol.status == OPTIMAL
        assert sol.u[0] == pytest.approx(1.0, abs=1e-10)

    def test_asymmetric_hessian_rejected(self):
        with pytest.raises(QPStructureError):
            solve(QPProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0],
                            np.zeros((0, 2)), [], [-1, -1], [1, 1]))

    def test_indefinite_hessian_rejected(self):
        with pytest.raises(QPStructureError):
            solve(QPProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0],
                            np.zeros((0, 2)), [], [-1, -1], [1, 1]))


class TestOracleSmall:
    def test_enumeration_oracle_1000(self):
        rng = np.random.default_rng(314159)
        solved = 0
        infeasible = 0
        for trial in range(1000):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(0, 7))
            problem = random_problem(rng, n, m, feasible_bias=(trial % 3 != 0))
            sol = solve(problem)
            oracle_x, oracle_obj = enumeration_oracle(problem)
            if oracle_x is None:
                assert sol.status == INFEASIBLE, f"trial {trial}: oracle found no optimum"
                infeasible += 1
                continue
            assert sol.status == OPTIMAL, f"trial {trial}: {sol.status}"
            assert _objective(problem, sol.u) == pytest.approx(oracle_obj, abs=1e-6)
            solved += 1
        assert solved > 500 and infeasible > 50

    def test_grid_cross_check(self):
        # coarse grid plus local polish agrees with the solver on a handful
        rng = np.random.default_rng(42)
        for _ in range(20):
            problem = random_problem(rng, 2, 4)
            sol = solve(problem)
            if sol.status != OPTIMAL:
                continue
            lo = np.where(np.isfinite(problem.lower), problem.lower, -6.0)
            hi = np.where(np.isfinite(problem.upper), problem.upper, 6.0)
            axes = [np.linspace(lo[i], hi[i], 160) for i in range(2)]
            xx, yy = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
            ok = np.ones(pts.shape[0], dtype=bool)
            for row, bound in zip(problem.ineq_coeffs, problem.ineq_bounds):
                ok &= pts @ row >= bound - 1e-9
            if not ok.any():
                continue
            vals = 0.5 * np.einsum("ij,jk,ik->i", pts, problem.hessian, pts) + pts @ problem.gradient
            best = vals[ok].min()
            # grid resolution limits agreement; solver must not be worse
            assert _objective(problem, sol.u) <= best + 1e-6


class TestOracleLarge:
    def test_kkt_residuals_1000(self):
        rng = np.random.default_rng(271828)
        checked = 0
        for trial in range(1000):
            n = int(rng.integers(2, 26))
            m = int(rng.integers(0, 301))
            problem = random_problem(rng, n, m)
            sol = solve(problem)
            if sol.status == INFEASIBLE:
                self._certify_infeasible(problem, trial)
                continue
            assert sol.status == OPTIMAL, f"trial {trial}: {sol.status}"
            res = kkt_residual(problem, sol)
            scale = 1.0 + float(np.abs(problem.gradient).max())
            assert res.stationarity <= 1e-6 * scale, f"trial {trial}"
            assert res.feasibility <= 1e-8 * (1.0 + float(np.abs(sol.u).max())), f"trial {trial}"
            assert res.complementarity <= 1e-5 * scale, f"trial {trial}"
            assert sol.duals.min() >= -1e-8
            checked += 1
        assert checked >= 900

    @staticmethod
    def _certify_infeasible(problem: QPProblem, trial: int):
        from scipy.optimize import linprog

        n, m = problem.n, problem.m
        res = linprog(
            c=np.zeros(n),
            A_ub=-problem.ineq_coeffs,
            b_ub=-problem.ineq_bounds,
            bounds=list(zip(
                [None if not np.isfinite(v) else v for v in problem.lower],
                [None if not np.isfinite(v) else v for v in problem.upper],
            )),
            method="highs",
        )
        assert res.status == 2, f"trial {trial}: solver said infeasible, LP disagrees"


class TestWarmAndKernels:
    def test_warm_start_matches_cold(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            problem = random_problem(rng, int(rng.integers(2, 10)), int(rng.integers(0, 20)))
            cold = solve(problem)
            if cold.status != OPTIMAL:
                continue
            warm_point = cold.u + rng.normal(scale=0.05, size=problem.n)
            active = tuple(int(i) for i in np.nonzero(cold.duals[: problem.m] > 1e-8)[0])
            warm = solve(problem, warm_start=WarmStart(point=warm_point, active_rows=active))
            assert warm.status == OPTIMAL
            np.testing.assert_allclose(warm.u, cold.u, atol=1e-8)

    def test_kernels_agree(self):
        kernels = qpsolver.available_kernels()
        if len(kernels) < 2:
            pytest.skip("compiled kernel unavailable")
        rng = np.random.default_rng(99)
        import mergesim.qpsolver as qp

        for _ in range(300):
            problem = random_problem(rng, int(rng.integers(1, 12)), int(rng.integers(0, 40)))
            results = {}
            original = qp._KERNEL
            try:
                for name, kern in kernels.items():
                    qp._KERNEL = kern
                    results[name] = solve(problem)
            finally:
                qp._KERNEL = original
            statuses = {r.status for r in results.values()}
            assert len(statuses) == 1, statuses
            if statuses == {OPTIMAL}:
                xs = list(results.values())
                np.testing.assert_allclose(xs[0].u, xs[1].u, atol=1e-7)

    def test_iterations_bounded(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            problem = random_problem(rng, 8, 40)
            sol = solve(problem)
            assert sol.iterations <= 3 * 50 * (8 + 40 + 17)


class TestDumpLoad:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        problem = random_problem(rng, 3, 5)
        path = tmp_path / "problem.json"
        qpsolver.dump_problem(problem, str(path), note="repro")
        again = qpsolver.load_problem(str(path))
        np.testing.assert_allclose(again.hessian, problem.hessian)
        np.testing.assert_allclose(again.ineq_coeffs, problem.ineq_coeffs)
        first = solve(problem)
        second = solve(again)
        assert first.status == second.status
        if first.status == OPTIMAL:
            np.testing.assert_allclose(first.u, second.u, atol=1e-10)
