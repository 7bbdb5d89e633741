import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy.optimize import linprog

from widthflow.conic import SETTINGS, ConeSolverError, solve_cone_qp, solver_settings


def soc_projection(p):
    t, v = p[0], p[1:]
    nv = np.linalg.norm(v)
    if nv <= t:
        return p.copy()
    if nv <= -t:
        return np.zeros_like(p)
    a = 0.5 * (t + nv)
    return np.r_[a, a * v / nv]


def test_small_lp():
    # min x1 + x2  s.t.  x >= 0,  x1 + x2 >= 1
    G = np.array([[-1.0, 0.0], [0.0, -1.0], [-1.0, -1.0]])
    sol = solve_cone_qp(np.zeros(2), np.ones(2), G, np.array([0.0, 0.0, -1.0]), 3)
    assert sol.status == "optimal"
    assert abs(sol.primal_objective - 1.0) <= 1e-9
    assert abs(sol.dual_objective - 1.0) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(p=st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3))
@example(p=[0.0, 0.0, 0.0])
@example(p=[3.0, 0.0, 3.0])
@example(p=[3.0, 2.0, 3.0])
def test_projection_onto_second_order_cone(p):
    p = np.array(p)
    sol = solve_cone_qp(np.ones(3), -p, -np.eye(3), np.zeros(3), 0,
                        feastol=1e-12, abstol=1e-13, reltol=1e-13)
    ref = soc_projection(p)
    # the distance is well conditioned; the point itself converges like sqrt(gap)
    # when p lies on the cone or at the apex, where complementarity is not strict
    assert abs(np.sum((sol.x - p) ** 2) - np.sum((ref - p) ** 2)) <= 1e-10
    assert np.max(np.abs(sol.x - ref)) <= 1e-5


def test_many_cones_match_closed_form():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((50, 3))
    n = P.size
    G = -np.eye(n)
    sol = solve_cone_qp(np.ones(n), -P.ravel(), G, np.zeros(n), 0)
    ref = np.concatenate([soc_projection(p) for p in P])
    assert np.max(np.abs(sol.x - ref)) <= 1e-6


def test_random_lps_agree_with_highs():
    rng = np.random.default_rng(1)
    for _ in range(10):
        A = rng.standard_normal((30, 5))
        b = rng.uniform(0.5, 1.5, 30)
        c = rng.standard_normal(5)
        # add a box so the program is bounded
        G = np.vstack([A, np.eye(5), -np.eye(5)])
        h = np.r_[b, 3 * np.ones(10)]
        ref = linprog(c, A_ub=G, b_ub=h, bounds=[(None, None)] * 5, method="highs")
        sol = solve_cone_qp(np.zeros(5), c, G, h, G.shape[0])
        assert abs(sol.primal_objective - ref.fun) <= 1e-7


def test_optimality_condition_holds():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((4, 4))
    P = M @ M.T + np.eye(4)
    q = rng.standard_normal(4)
    G = np.vstack([np.eye(4), -np.eye(4)])
    h = 0.1 * np.ones(8)
    sol = solve_cone_qp(P, q, G, h, 8)
    assert np.max(np.abs(P @ sol.x + q + G.T @ sol.z)) <= 1e-8
    assert np.all(sol.s >= -1e-12) and np.all(sol.z >= -1e-12)


def test_infeasible_program_raises():
    # x <= -1 and x >= 1
    G = np.array([[1.0], [-1.0]])
    with pytest.raises(ConeSolverError):
        solve_cone_qp(np.zeros(1), np.zeros(1), G, np.array([-1.0, -1.0]), 2)


def test_solver_settings_restores_defaults():
    before = dict(SETTINGS)
    with solver_settings(max_iter=5) as s:
        assert s["max_iter"] == 5
    assert SETTINGS == before


def test_solver_settings_rejects_unknown_key():
    with pytest.raises(KeyError):
        with solver_settings(tolerance=1.0):
            pass
