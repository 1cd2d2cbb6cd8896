import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from cis_kit.qp import solve_qp


def test_unconstrained_minimum():
    res = solve_qp(np.diag([2.0, 4.0]), [-2.0, -4.0])
    assert res.optimal
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-10)


def test_active_bound():
    # min (x-2)^2 s.t. x <= 1
    res = solve_qp([[2.0]], [-4.0], A_ub=[[1.0]], b_ub=[1.0])
    assert res.x[0] == pytest.approx(1.0)


def test_infeasible_constraints():
    res = solve_qp(np.eye(1), [0.0], A_ub=[[1.0], [-1.0]], b_ub=[-1.0, -1.0])
    assert not res.optimal


def test_equality_constraint():
    res = solve_qp(np.eye(2), [0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-10)


@given(st.integers(0, 10_000))
def test_matches_slsqp_oracle(seed):
    r = np.random.default_rng(seed)
    n, m = 3, 5
    L = r.normal(size=(n, n))
    H = L @ L.T + 0.5 * np.eye(n)
    f = r.normal(size=n)
    A = r.normal(size=(m, n))
    b = r.uniform(0.2, 1.0, m)              # x = 0 is feasible
    res = solve_qp(H, f, A_ub=A, b_ub=b)
    assert res.optimal
    assert np.all(A @ res.x <= b + 1e-9)
    ref = minimize(lambda x: 0.5 * x @ H @ x + f @ x, np.zeros(n), jac=lambda x: H @ x + f,
                   constraints=[{"type": "ineq", "fun": lambda x: b - A @ x, "jac": lambda x: -A}],
                   method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
    assert res.objective <= ref.fun + 1e-6
