import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cis_kit.errors import DegenerateInput, DimensionMismatch, EmptyPolytope, RowExplosion
from cis_kit.lp import LpProblem, solve_lp
from cis_kit.polytope import (HPolytope, VPolytope, contains, convex_hull, inclusion,
                              inclusion_excess, mutually_include, polytope_from_json, project,
                              remove_redundancy, ri_membership, vertex_enumeration, volume)
from oracles import brute_vertices, grid_ri_verdict, same_point_sets

BOX = HPolytope.box([-1, -1], [1, 1])


def test_hpolytope_normalises_and_drops_vacuous_rows():
    P = HPolytope([[2.0, 0.0], [0.0, 0.0]], [4.0, 1.0])
    assert P.num_rows == 1
    np.testing.assert_allclose(P.H, [[1.0, 0.0]])
    np.testing.assert_allclose(P.q, [2.0])
    with pytest.raises(DegenerateInput):
        HPolytope([[0.0, 0.0]], [-1.0])
    with pytest.raises(DimensionMismatch):
        HPolytope([[1.0, 0.0]], [1.0, 2.0])


@pytest.mark.parametrize("x,expected", [((0, 0), True), ((1, 1), True), ((1.5, 0), False)])
def test_contains_box(x, expected):
    assert contains(BOX, x) is expected


def test_hull_of_unit_simplex():
    P = convex_hull([[0, 0], [1, 0], [0, 1]])
    assert P.num_rows == 3
    for x, inside in [((0.2, 0.2), True), ((0.6, 0.6), False), ((-0.01, 0.5), False)]:
        assert P.contains(x) is inside


def test_hull_of_single_point_pins_it():
    P = convex_hull([[0.0, 0.0]])
    assert P.contains([0, 0])
    assert not P.contains([1e-6, 0])
    assert not P.contains([0, -1e-6])


def test_hull_eliminates_interior_point():
    pts = np.array([[0, 0], [2, 0], [1, 1], [1, 0.2]], dtype=float)
    P = convex_hull(pts)
    assert P.num_rows == 3
    assert np.all(pts @ P.H.T <= P.q + 1e-9)
    # every facet is supported by at least two input points
    for h, b in zip(P.H, P.q):
        assert np.sum(np.abs(pts @ h - b) <= 1e-9) >= 2


def test_vertex_enumeration_box():
    V = vertex_enumeration(BOX).vertices
    assert same_point_sets(V, [[1, 1], [1, -1], [-1, 1], [-1, -1]])


def test_vertex_enumeration_round_trip_triangle():
    pts = [[0, 0], [1, 0], [0, 1]]
    assert same_point_sets(vertex_enumeration(convex_hull(pts)).vertices, pts)


def test_vertex_enumeration_with_redundant_rows_matches_brute_force():
    H = np.vstack([BOX.H, BOX.H, [[1, 0]], [[1, 1]]])
    q = np.concatenate([BOX.q, BOX.q, [5.0], [3.0]])
    V = vertex_enumeration(HPolytope(H, q)).vertices
    assert same_point_sets(V, brute_vertices(H, q))
    assert len(V) == 4


def test_vertex_enumeration_empty():
    with pytest.raises(EmptyPolytope):
        vertex_enumeration(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))


def test_project_separable():
    P = HPolytope.box([-1, -0.5], [1, 0.5])
    Q = project(P, [0])
    assert same_point_sets(vertex_enumeration(Q).vertices, [[-1], [1]])


def test_project_by_hand():
    # x + u <= 1, x - u <= 1, |u| <= 2  gives x <= 1 - |u|, so x <= 1 (unbounded below)
    P = HPolytope([[1, 1], [1, -1], [0, 1], [0, -1]], [1, 1, 2, 2])
    Q = project(P, [0])
    assert Q.contains([1.0]) and Q.contains([-100.0]) and not Q.contains([1.001])
    # brute force over a grid of u
    us = np.linspace(-2, 2, 4001)
    for x in (0.999, 1.0, 1.001, -3.0):
        feasible = np.any((x + us <= 1 + 1e-12) & (x - us <= 1 + 1e-12))
        assert Q.contains([x]) == feasible


def test_project_empty_raises():
    P = HPolytope([[1, 0], [-1, 0]], [-1, -1])
    with pytest.raises(EmptyPolytope):
        project(P, [0])


def test_project_row_cap():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(40, 4))
    P = HPolytope(H, np.ones(40))
    with pytest.raises(RowExplosion):
        project(P, [0], max_rows=10, prune=False)


def test_remove_redundancy_examples():
    P = HPolytope(np.vstack([BOX.H, [[1, 0]]]), np.concatenate([BOX.q, [5]]))
    assert remove_redundancy(P).num_rows == 4
    P = HPolytope(np.vstack([BOX.H, BOX.H[:1]]), np.concatenate([BOX.q, BOX.q[:1]]))
    assert remove_redundancy(P).num_rows == 4


def test_remove_redundancy_drops_exactly_known_rows():
    rng = np.random.default_rng(3)
    ang = np.sort(rng.uniform(0, 2 * np.pi, 7))
    H = np.column_stack([np.cos(ang), np.sin(ang)])
    q = rng.uniform(1, 2, 7)
    core = HPolytope(H, q)
    V = brute_vertices(core.H, core.q)
    extra_H = rng.normal(size=(3, 2))
    extra_H /= np.linalg.norm(extra_H, axis=1, keepdims=True)
    extra_q = (V @ extra_H.T).max(axis=0) + 0.3     # strictly outside every vertex
    P = HPolytope(np.vstack([core.H, extra_H]), np.concatenate([core.q, extra_q]))
    R = remove_redundancy(P)
    assert R.num_rows == remove_redundancy(core).num_rows
    assert same_point_sets(brute_vertices(R.H, R.q), V)


def test_ri_membership_examples():
    r = ri_membership([0.5], [[0.0], [1.0]])
    np.testing.assert_allclose(r.weights, [0.5, 0.5])
    assert r.margin == pytest.approx(0.5)
    assert ri_membership([0.0], [[0.0], [1.0]]).margin == pytest.approx(0.0, abs=1e-12)
    assert not ri_membership([2.0], [[0.0], [1.0]]).in_hull
    pts = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    r = ri_membership([0.25, 0.25], pts)
    assert r.margin > 0
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(r.weights @ pts, [0.25, 0.25], atol=1e-9)
    assert grid_ri_verdict([0.25, 0.25], pts) == "ri"


def test_ri_membership_tiny_scale():
    pts = 1e-9 * np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    assert ri_membership(1e-9 * np.array([0.25, 0.25]), pts).margin > 0.2


def test_inclusion_examples():
    small = vertex_enumeration(HPolytope.box([-0.5, -0.5], [0.5, 0.5]))
    assert inclusion(small, BOX)
    assert not inclusion(vertex_enumeration(BOX), HPolytope.box([-0.5, -0.5], [0.5, 0.5]))
    assert inclusion(vertex_enumeration(BOX), BOX, tol=1e-9)


def test_mutual_inclusion_is_strict():
    assert mutually_include(BOX, BOX, 1e-9)
    assert not mutually_include(BOX, BOX, 0.0)
    assert inclusion_excess(HPolytope.box([-2, -1], [1, 1]), BOX) == pytest.approx(1.0)


def test_volume_examples():
    assert volume(vertex_enumeration(BOX)).value == pytest.approx(4.0)
    assert volume(VPolytope([[0, 0], [1, 0], [0, 1]])).value == pytest.approx(0.5)
    flat = volume(VPolytope([[0, 0], [1, 1], [2, 2]]))
    assert flat.value == 0.0 and flat.degenerate


def test_volume_cross_polytope_4d():
    V = np.vstack([np.eye(4), -np.eye(4)])
    exact = 2 ** 4 / math.factorial(4)
    mc = volume(VPolytope(V), seed=1)
    assert mc.method == "mc"
    assert abs(mc.value - exact) / exact < 0.05
    assert mc.std_error > 0
    assert volume(VPolytope(V), method="exact").value == pytest.approx(exact)


def test_volume_mc_is_seeded():
    V = VPolytope(np.vstack([np.eye(4), -np.eye(4)]))
    assert volume(V, seed=5, samples=20000).value == volume(V, seed=5, samples=20000).value


def test_json_formats():
    assert polytope_from_json({"box": {"lb": [-1, -1], "ub": [1, 1]}}).num_rows == 4
    P = polytope_from_json(BOX.to_json())
    np.testing.assert_array_equal(P.H, BOX.H)
    V = polytope_from_json({"V": [[0, 0], [1, 0]]})
    assert isinstance(V, VPolytope)
    with pytest.raises(DegenerateInput):
        polytope_from_json({"nothing": 1})


def _random_polytope(seed, n, rows):
    r = np.random.default_rng(seed)
    H = r.normal(size=(rows, n))
    q = r.uniform(0.5, 1.5, rows)
    bound = HPolytope.box(-2 * np.ones(n), 2 * np.ones(n))
    return HPolytope(np.vstack([H, bound.H]), np.concatenate([q, bound.q]))


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 6))
def test_hull_vertex_round_trip(seed, n, rows):
    P = _random_polytope(seed, n, rows)
    Q = convex_hull(vertex_enumeration(P).vertices)
    assert mutually_include(P, Q, 1e-7)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 6))
def test_vertex_enumeration_matches_brute_force(seed, n, rows):
    P = _random_polytope(seed, n, rows)
    assert same_point_sets(vertex_enumeration(P).vertices, brute_vertices(P.H, P.q))


@given(st.integers(0, 10_000))
def test_redundancy_removal_keeps_vertices(seed):
    P = _random_polytope(seed, 2, 6)
    assert same_point_sets(vertex_enumeration(remove_redundancy(P)).vertices,
                           vertex_enumeration(P).vertices)


@given(st.integers(0, 10_000))
def test_projection_soundness(seed):
    r = np.random.default_rng(seed)
    P = _random_polytope(seed, 3, 5)
    Q = project(P, [0, 1])
    V = vertex_enumeration(P).vertices
    # feasible lifted points project inside
    W = r.dirichlet(np.ones(len(V)), size=50) @ V
    assert np.all(W[:, :2] @ Q.H.T <= Q.q + 1e-8)
    # points inside the projection admit a feasible third coordinate
    QV = vertex_enumeration(Q).vertices
    for x in r.dirichlet(np.ones(len(QV)), size=20) @ QV:
        A = P.H[:, 2:3]
        b = P.q - P.H[:, :2] @ x
        assert solve_lp(LpProblem.build([0.0], A, b + 1e-9)).optimal
