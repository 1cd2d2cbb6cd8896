import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from cis_kit.lp import (LpProblem, LpStatus, check_feasible, dual_objective, solve_lp)

BACKENDS = ["highs", "simplex"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_bound_attaining_minimum(backend):
    sol = solve_lp(LpProblem.build([1.0], lb=[0.0], ub=[5.0]), backend=backend)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.point[0] == pytest.approx(0.0)
    assert sol.objective_value == pytest.approx(0.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_simplex_vertex(backend):
    p = LpProblem.build([-1.0, -1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0], lb=[0, 0])
    sol = solve_lp(p, backend=backend)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(-1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_feasible_set(backend):
    p = LpProblem.build([0.0], A_ub=[[1.0], [-1.0]], b_ub=[-1.0, -1.0])
    assert solve_lp(p, backend=backend).status is LpStatus.INFEASIBLE


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded(backend):
    p = LpProblem.build([-1.0], lb=[0.0])
    assert solve_lp(p, backend=backend).status is LpStatus.UNBOUNDED


@pytest.mark.parametrize("backend", BACKENDS)
def test_check_feasible_examples(backend):
    assert check_feasible(LpProblem.build([0.0], lb=[0.0], ub=[1.0]), backend=backend)
    empty = LpProblem.build([0.0], A_ub=[[-1.0], [1.0]], b_ub=[-2.0, 1.0])
    assert not check_feasible(empty, backend=backend)
    p = LpProblem.build([0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lb=[0, 0])
    assert check_feasible(p, backend=backend)


def _random_lp(seed, m=6, n=4):
    r = np.random.default_rng(seed)
    A = r.normal(size=(m, n))
    x0 = r.uniform(-1, 1, n)
    b = A @ x0 + r.uniform(0.1, 1.0, m)
    c = r.normal(size=n)
    return LpProblem.build(c, A, b, lb=-5 * np.ones(n), ub=5 * np.ones(n))


@given(st.integers(0, 10_000))
def test_simplex_matches_scipy_oracle(seed):
    p = _random_lp(seed)
    ref = linprog(p.objective, A_ub=p.ineq_matrix, b_ub=p.ineq_rhs,
                  bounds=list(zip(p.lower_bounds, p.upper_bounds)), method="highs")
    sol = solve_lp(p, backend="simplex")
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(ref.fun, abs=1e-7)
    assert p.max_violation(sol.point) <= 1e-8


@given(st.integers(0, 10_000))
def test_weak_duality(seed):
    p = _random_lp(seed)
    for backend in BACKENDS:
        sol = solve_lp(p, backend=backend)
        assert abs(dual_objective(p, sol) - sol.objective_value) <= 1e-7


def test_deterministic():
    p = _random_lp(7)
    a, b = solve_lp(p, backend="simplex"), solve_lp(p, backend="simplex")
    assert a.status is b.status and a.objective_value == b.objective_value


def test_crossed_bounds_rejected():
    from cis_kit.errors import DimensionMismatch
    with pytest.raises(DimensionMismatch):
        LpProblem.build([0.0], lb=[2.0], ub=[1.0])
