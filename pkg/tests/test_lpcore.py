# tests/test_lpcore.py
import os
import sys

import numpy as np
import pytest
from scipy.optimize import linprog

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from services.errors import DimensionMismatchError, GuardExceededError, InputError, NonFiniteInputError
from services.lpcore import (
    INFEASIBLE, OPTIMAL, UNBOUNDED, RealLP, check_optimality, enumerate_vertices, solve_lp,
)


def test_single_variable():
    sol = solve_lp(RealLP([[1.0]], [1.0], [1.0]))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(1.0)


def test_two_variables_dual_is_one():
    lp = RealLP([[1.0, 1.0]], [2.0], [1.0, 1.0])
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(2.0)
    assert sol.dual_y[0] == pytest.approx(1.0)
    ok, msg = check_optimality(lp, sol)
    assert ok, msg


def test_monotone_matching_transport():
    # {0, 4} -> {1, 3}, uniform masses, costs |x - y|
    cost = np.array([1.0, 3.0, 3.0, 1.0])
    A = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=float)
    b = np.array([0.5, 0.5, 0.5, 0.5])
    sol = solve_lp(RealLP(A, b, cost))
    assert sol.objective == pytest.approx(1.0, abs=1e-12)


def test_infeasible_carries_farkas_ray():
    A = np.array([[1.0, 1.0]])
    sol = solve_lp(RealLP(A, [-1.0], [0.0, 0.0]))
    assert sol.status == INFEASIBLE
    y = sol.farkas_y
    assert np.all(A.T @ y <= 1e-9)
    assert float(np.array([-1.0]) @ y) > 1e-9


def test_unbounded():
    sol = solve_lp(RealLP([[1.0, -1.0]], [0.0], [-1.0, 0.0]))
    assert sol.status == UNBOUNDED


def test_max_sense():
    lp = RealLP([[1.0, 1.0]], [3.0], [2.0, 1.0], sense="max")
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(6.0)
    ok, msg = check_optimality(lp, sol)
    assert ok, msg


def test_invalid_inputs():
    with pytest.raises(DimensionMismatchError):
        RealLP([[1.0, 2.0]], [1.0, 2.0], [1.0, 1.0])
    with pytest.raises(NonFiniteInputError):
        RealLP([[np.inf]], [1.0], [1.0])
    with pytest.raises(InputError):
        RealLP([[1.0]], [1.0], [1.0], sense="sideways")


def test_degenerate_problem_terminates():
    # Classic cycling example for Dantzig pricing, in standard form with slacks
    A = np.array([
        [0.5, -5.5, -2.5, 9.0, 1, 0, 0],
        [0.5, -1.5, -0.5, 1.0, 0, 1, 0],
        [1.0, 0.0, 0.0, 0.0, 0, 0, 1],
    ])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([-10.0, 57.0, 9.0, 24.0, 0, 0, 0])
    sol = solve_lp(RealLP(A, b, c))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)


def test_degenerate_run_switches_to_blands_rule(mocker):
    A = np.array([
        [0.5, -5.5, -2.5, 9.0, 1, 0, 0],
        [0.5, -1.5, -0.5, 1.0, 0, 1, 0],
        [1.0, 0.0, 0.0, 0.0, 0, 0, 1],
    ])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([-10.0, 57.0, 9.0, 24.0, 0, 0, 0])
    # the first pivot is degenerate (zero right-hand sides), so a limit of one forces the switch
    mocker.patch("services.lpcore.DEGENERACY_LIMIT", 1)
    sol = solve_lp(RealLP(A, b, c))
    assert sol.bland_used
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)
    ok, msg = check_optimality(RealLP(A, b, c), sol)
    assert ok, msg


def test_nondegenerate_problem_keeps_dantzig_pricing():
    sol = solve_lp(RealLP(np.array([[1.0, 1.0]]), np.array([2.0]), np.array([1.0, 3.0])))
    assert sol.status == OPTIMAL
    assert not sol.bland_used


def test_matches_scipy_on_random_feasible_bounded_lps():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(n, 9))
        A = rng.integers(-3, 4, size=(n, m)).astype(float)
        x0 = rng.uniform(0, 2, size=m)
        b = A @ x0
        c = rng.uniform(0.1, 3.0, size=m)
        lp = RealLP(A, b, c)
        sol = solve_lp(lp)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * m, method="highs")
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(ref.fun, abs=1e-8, rel=1e-8)
        ok, msg = check_optimality(lp, sol)
        assert ok, msg


def test_simplex_agrees_with_vertex_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        G = rng.integers(-2, 3, size=(d + 2, d)).astype(float)
        G = G[np.any(G != 0, axis=1)]
        h = rng.uniform(0.5, 2.0, size=G.shape[0])
        # bounded region: add the box 0 <= y <= 3
        A_ineq = np.vstack([G, np.eye(d), -np.eye(d)])
        b_ineq = np.concatenate([h, np.full(d, 3.0), np.zeros(d)])
        c = rng.normal(size=d)
        vertices = enumerate_vertices(A_ineq, b_ineq)
        best = min(float(c @ v) for v in vertices)
        # min c^T y, A y + s = b, y >= 0, s >= 0
        k = A_ineq.shape[0]
        lp = RealLP(np.hstack([A_ineq, np.eye(k)]), b_ineq, np.concatenate([c, np.zeros(k)]))
        sol = solve_lp(lp)
        assert sol.objective == pytest.approx(best, abs=1e-8)


def test_deterministic():
    rng = np.random.default_rng(5)
    A = rng.integers(0, 3, size=(3, 6)).astype(float)
    b = A @ rng.uniform(0, 1, size=6)
    c = rng.uniform(0, 1, size=6)
    first, second = solve_lp(RealLP(A, b, c)), solve_lp(RealLP(A, b, c))
    assert first.basis == second.basis
    assert np.array_equal(first.x, second.x)


def test_vertices_of_unit_box():
    A = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    vertices = enumerate_vertices(A, [1, 1, 0, 0])
    assert len(vertices) == 4
    assert {tuple(np.round(v, 9)) for v in vertices} == {(0, 0), (1, 0), (0, 1), (1, 1)}


def test_vertices_of_simplex():
    A = np.array([[1, 1], [-1, 0], [0, -1]], dtype=float)
    assert len(enumerate_vertices(A, [1, 0, 0])) == 3


def test_vertices_of_cut_square():
    A = np.array([[1, 0], [0, 1], [1, 1], [-1, 0], [0, -1]], dtype=float)
    vertices = {tuple(np.round(v, 9)) for v in enumerate_vertices(A, [1, 1, 1.5, 0, 0])}
    assert len(vertices) == 5
    assert (1.0, 0.5) in vertices and (0.5, 1.0) in vertices


def test_vertex_guard_and_zero_row():
    with pytest.raises(GuardExceededError):
        enumerate_vertices(np.eye(13), np.ones(13))
    with pytest.raises(InputError):
        enumerate_vertices([[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])
