"""Convex polytopes in half-space (H) and vertex (V) form.

Lower-dimensional sets are first-class: a hull whose affine dimension is
below the ambient dimension carries its affine hull as explicit pairs of
opposing inequality rows, so relative-interior questions stay meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import (DegenerateInput, DimensionMismatch, EmptyPolytope, RowExplosion,
                     UnboundedPolytope)
from .lp import LpProblem, LpStatus, solve_lp

__all__ = [
    "HPolytope",
    "VPolytope",
    "RiCertificate",
    "VolumeEstimate",
    "contains",
    "convex_hull",
    "hull_vertices",
    "vertex_enumeration",
    "project",
    "remove_redundancy",
    "ri_membership",
    "inclusion",
    "h_inclusion",
    "mutually_include",
    "volume",
    "polytope_to_json",
    "polytope_from_json",
    "affine_hull",
]

DEDUP_TOL = 1e-9
RANK_TOL = 1e-9
MAX_FM_ROWS = 20_000


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set {x : H x <= q}.  Rows are stored with unit-norm normals."""

    H: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if H.ndim == 1:
            H = H.reshape(len(q), -1) if len(q) else H.reshape(0, H.shape[0])
        if H.shape[0] != q.shape[0]:
            raise DimensionMismatch(f"H has {H.shape[0]} rows but q has {q.shape[0]} entries")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(q))):
            raise DegenerateInput("H-representation contains non-finite entries")
        norms = np.linalg.norm(H, axis=1)
        zero = norms <= 1e-12
        if np.any(q[zero] < -1e-12):
            raise DegenerateInput("zero row with negative right-hand side (empty set)")
        keep = ~zero
        H = H[keep] / norms[keep, None]
        q = q[keep] / norms[keep]
        H.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def num_rows(self) -> int:
        return self.H.shape[0]

    @classmethod
    def box(cls, lb, ub) -> "HPolytope":
        lb = np.asarray(lb, dtype=float).reshape(-1)
        ub = np.asarray(ub, dtype=float).reshape(-1)
        if lb.shape != ub.shape:
            raise DimensionMismatch("box bounds differ in length")
        n = lb.shape[0]
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([ub, -lb]))

    @classmethod
    def universe(cls, n: int) -> "HPolytope":
        return cls(np.zeros((0, n)), np.zeros(0))

    def contains(self, x, tol: float = 1e-9) -> bool:
        return contains(self, x, tol)

    def intersect(self, other: "HPolytope") -> "HPolytope":
        if other.dim != self.dim:
            raise DimensionMismatch("intersecting polytopes of different dimension")
        return HPolytope(np.vstack([self.H, other.H]), np.concatenate([self.q, other.q]))

    def is_empty(self) -> bool:
        return _feasible_point(self) is None

    def bounding_box(self):
        """Per-coordinate (lower, upper); raises when empty or unbounded."""
        n = self.dim
        lo, hi = np.empty(n), np.empty(n)
        for k in range(n):
            for sign, out in ((1.0, hi), (-1.0, lo)):
                c = np.zeros(n)
                c[k] = -sign
                sol = solve_lp(LpProblem.build(c, self.H, self.q))
                if sol.status is LpStatus.INFEASIBLE:
                    raise EmptyPolytope("bounding box of an empty polytope")
                if sol.status is LpStatus.UNBOUNDED:
                    raise UnboundedPolytope(f"polytope unbounded along coordinate {k}")
                out[k] = sol.point[k]
        return lo, hi

    def is_bounded(self) -> bool:
        try:
            self.bounding_box()
        except UnboundedPolytope:
            return False
        return True

    def chebyshev_center(self):
        """(center, radius) of the largest inscribed ball; radius < 0 never occurs."""
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.H, np.ones((self.num_rows, 1))])
        ub = np.full(n + 1, np.inf)
        ub[-1] = 1e6
        lb = np.full(n + 1, -np.inf)
        lb[-1] = 0.0
        sol = solve_lp(LpProblem.build(c, A, self.q, lb=lb, ub=ub))
        if sol.status is LpStatus.INFEASIBLE:
            raise EmptyPolytope("Chebyshev center of an empty polytope")
        if sol.status is LpStatus.UNBOUNDED:
            raise UnboundedPolytope("unbounded polytope has no Chebyshev center")
        return sol.point[:n], float(sol.point[-1])

    def to_json(self) -> dict:
        return {"H": self.H.tolist(), "q": self.q.tolist()}

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.num_rows})"


@dataclass(frozen=True, eq=False)
class VPolytope:
    """Convex hull of a finite point list."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.size == 0:
            raise DegenerateInput("a V-polytope needs at least one point")
        if not np.all(np.isfinite(V)):
            raise DegenerateInput("vertices contain non-finite entries")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def canonical(self) -> "VPolytope":
        """Deduplicate and keep only the extreme points."""
        return VPolytope(hull_vertices(self.vertices))

    def to_hrep(self) -> HPolytope:
        return convex_hull(self.vertices)

    def to_json(self) -> dict:
        return {"V": self.vertices.tolist()}

    def __repr__(self):
        return f"VPolytope(dim={self.dim}, vertices={self.num_vertices})"


@dataclass(frozen=True)
class RiCertificate:
    """Convex weights reproducing a point, and their smallest entry (margin)."""

    weights: Optional[np.ndarray]
    margin: float

    @property
    def in_hull(self) -> bool:
        return self.weights is not None

    @property
    def in_relative_interior(self) -> bool:
        return self.margin > 0


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    std_error: float = 0.0
    degenerate: bool = False
    method: str = "exact"

    @property
    def relative_error(self) -> float:
        return self.std_error / self.value if self.value > 0 else 0.0


# --------------------------------------------------------------------------
# helpers


def _points(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0:
        raise DegenerateInput("empty point list")
    return P


def _dedupe(P: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    keep: list[int] = []
    for i in range(P.shape[0]):
        if all(np.linalg.norm(P[i] - P[j]) > tol for j in keep):
            keep.append(i)
    return P[keep]


def _dedupe_rows(H: np.ndarray, q: np.ndarray, tol: float = 1e-12):
    if H.shape[0] == 0:
        return H, q
    M = np.hstack([H, q[:, None]])
    keep: list[int] = []
    for i in range(M.shape[0]):
        if not keep or np.min(np.max(np.abs(M[keep] - M[i]), axis=1)) > tol:
            keep.append(i)
    return H[keep], q[keep]


def affine_hull(points, tol: float = RANK_TOL):
    """(centroid, basis, complement) with orthonormal columns spanning the hull directions."""
    P = _points(points)
    c = P.mean(axis=0)
    D = P - c
    n = P.shape[1]
    if P.shape[0] == 1:
        return c, np.zeros((n, 0)), np.eye(n)
    U, s, _ = np.linalg.svd(D.T, full_matrices=True)
    scale = max(1.0, float(np.max(np.abs(P))))
    r = int(np.sum(s > tol * scale * max(1, P.shape[0])))
    return c, U[:, :r], U[:, r:]


def _feasible_point(P: HPolytope):
    sol = solve_lp(LpProblem.build(np.zeros(P.dim), P.H, P.q))
    return sol.point if sol.optimal else None


def contains(P: HPolytope, x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != P.dim:
        raise DimensionMismatch(f"point has dimension {x.shape[0]}, polytope {P.dim}")
    return bool(np.all(P.H @ x <= P.q + tol))


# --------------------------------------------------------------------------
# V -> H


def convex_hull(points) -> HPolytope:
    """Irredundant H-representation of ch(points), flat hulls included."""
    P = _dedupe(_points(points))
    n = P.shape[1]
    c, basis, comp = affine_hull(P)
    rows, rhs = [], []
    for k in range(comp.shape[1]):
        w = comp[:, k]
        rows += [w, -w]
        rhs += [w @ c, -(w @ c)]
    r = basis.shape[1]
    if r == 1:
        w = basis[:, 0]
        y = (P - c) @ w
        rows += [w, -w]
        rhs += [y.max() + w @ c, -(y.min() + w @ c)]
    elif r >= 2:
        Y = (P - c) @ basis
        hull = _qhull(Y)
        eqs = hull.equations
        normals = eqs[:, :-1] @ basis.T
        offsets = -eqs[:, -1] + normals @ c
        for a, b in zip(normals, offsets):
            rows.append(a)
            rhs.append(b)
    H = np.array(rows, dtype=float).reshape(-1, n)
    q = np.array(rhs, dtype=float)
    out = HPolytope(H, q)
    H2, q2 = _dedupe_rows(out.H, out.q, tol=1e-10)
    return HPolytope(H2, q2)


def _qhull(Y: np.ndarray) -> ConvexHull:
    try:
        return ConvexHull(Y)
    except QhullError:
        return ConvexHull(Y, qhull_options="QJ")


def hull_vertices(points) -> np.ndarray:
    """Extreme points of ch(points), in input order."""
    P = _dedupe(_points(points))
    c, basis, _ = affine_hull(P)
    r = basis.shape[1]
    if r == 0:
        return P[:1]
    if r == 1:
        y = (P - c) @ basis[:, 0]
        idx = sorted({int(np.argmin(y)), int(np.argmax(y))})
        return P[idx]
    hull = _qhull((P - c) @ basis)
    return P[np.sort(hull.vertices)]


# --------------------------------------------------------------------------
# H -> V


def _implicit_equalities(P: HPolytope, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of rows that hold with equality on all of P."""
    mask = np.zeros(P.num_rows, dtype=bool)
    for i in range(P.num_rows):
        sol = solve_lp(LpProblem.build(P.H[i], P.H, P.q))
        if sol.optimal and P.q[i] - sol.objective_value <= tol * (1 + abs(P.q[i])):
            mask[i] = True
    return mask


def vertex_enumeration(P: HPolytope) -> VPolytope:
    """Extreme points of a bounded, non-empty H-polytope."""
    lo, hi = P.bounding_box()          # raises EmptyPolytope / UnboundedPolytope
    scale = 1.0 + float(np.max(np.abs(np.concatenate([lo, hi]))))
    center, radius = P.chebyshev_center()
    if radius > 1e-9 * scale:
        return VPolytope(_full_dim_vertices(P.H, P.q, center, scale))

    eq = _implicit_equalities(P)
    x0 = center
    Z = null_space(P.H[eq]) if np.any(eq) else np.eye(P.dim)
    r = Z.shape[1]
    if r == 0:
        return VPolytope(x0[None, :])
    Hr = P.H[~eq] @ Z
    qr = P.q[~eq] - P.H[~eq] @ x0
    if r == 1:
        ys = []
        for sign in (1.0, -1.0):
            sol = solve_lp(LpProblem.build([-sign], Hr, qr))
            ys.append(sol.point[0])
        V = np.array([x0 + Z[:, 0] * y for y in sorted(set(ys))])
        return VPolytope(_dedupe(V, DEDUP_TOL * scale))
    red = HPolytope(Hr, qr)
    c_red, rad = red.chebyshev_center()
    if rad <= 1e-12:
        raise DegenerateInput("could not recover a full-dimensional reduced polytope")
    Y = _full_dim_vertices(red.H, red.q, c_red, scale)
    return VPolytope(x0 + Y @ Z.T)


def _full_dim_vertices(H, q, interior, scale) -> np.ndarray:
    n = H.shape[1]
    if n == 1:
        pos, neg = H[:, 0] > 0, H[:, 0] < 0
        return np.array([[np.max(q[neg] / H[neg, 0])], [np.min(q[pos] / H[pos, 0])]])
    hs = HalfspaceIntersection(np.hstack([H, -q[:, None]]), interior)
    V = hs.intersections
    V = V[np.all(np.isfinite(V), axis=1)]
    return hull_vertices(_dedupe(V, DEDUP_TOL * scale))


# --------------------------------------------------------------------------
# redundancy, projection


def remove_redundancy(P: HPolytope, tol: float = 1e-9) -> HPolytope:
    """Drop every row that can be removed without changing the set."""
    if P.num_rows == 0:
        return P
    if _feasible_point(P) is None:
        raise EmptyPolytope("cannot prune an empty polytope")
    H, q = _dedupe_rows(P.H, P.q)
    keep = np.ones(H.shape[0], dtype=bool)
    for i in range(H.shape[0]):
        others = keep.copy()
        others[i] = False
        A = np.vstack([H[others], H[i]])
        b = np.concatenate([q[others], [q[i] + 1.0]])
        sol = solve_lp(LpProblem.build(-H[i], A, b))
        if sol.optimal and -sol.objective_value <= q[i] + tol * (1 + abs(q[i])):
            keep[i] = False
    return HPolytope(H[keep], q[keep])


def project(P: HPolytope, keep_dims: Sequence[int], max_rows: int = MAX_FM_ROWS,
            prune: bool = True) -> HPolytope:
    """Fourier-Motzkin projection onto the coordinates ``keep_dims`` (in that order)."""
    keep_dims = [int(k) for k in keep_dims]
    n = P.dim
    if not keep_dims or len(set(keep_dims)) != len(keep_dims) or min(keep_dims) < 0 \
            or max(keep_dims) >= n:
        raise DimensionMismatch(f"invalid keep_dims {keep_dims} for dimension {n}")
    if _feasible_point(P) is None:
        raise EmptyPolytope("projection of an empty set")
    order = keep_dims + [j for j in range(n) if j not in keep_dims]
    H = P.H[:, order].copy()
    q = P.q.copy()
    k = len(keep_dims)
    while H.shape[1] > k:
        # eliminate the remaining variable with the fewest generated rows
        cands = range(k, H.shape[1])
        cost = [np.sum(H[:, j] > 1e-12) * np.sum(H[:, j] < -1e-12) - np.sum(np.abs(H[:, j]) > 1e-12)
                for j in cands]
        j = list(cands)[int(np.argmin(cost))]
        H, q = _fm_step(H, q, j, max_rows)
        if prune and H.shape[0]:
            red = remove_redundancy(HPolytope(H, q))
            H, q = red.H.copy(), red.q.copy()
    return HPolytope(H, q)


def _fm_step(H, q, j, max_rows):
    col = H[:, j]
    pos = np.flatnonzero(col > 1e-12)
    neg = np.flatnonzero(col < -1e-12)
    zero = np.flatnonzero(np.abs(col) <= 1e-12)
    if len(zero) + len(pos) * len(neg) > max_rows:
        raise RowExplosion(f"elimination would create {len(zero) + len(pos) * len(neg)} rows "
                           f"(cap {max_rows})")
    rows = [H[zero]]
    rhs = [q[zero]]
    if len(pos) and len(neg):
        a = col[pos][:, None]           # > 0
        b = -col[neg][None, :]          # > 0
        combo = (b[..., None] * H[pos][:, None, :] + a[..., None] * H[neg][None, :, :])
        rows.append(combo.reshape(-1, H.shape[1]))
        rhs.append((b * q[pos][:, None] + a * q[neg][None, :]).reshape(-1))
    Hn = np.delete(np.vstack(rows), j, axis=1)
    qn = np.concatenate(rhs)
    norms = np.linalg.norm(Hn, axis=1)
    zero_rows = norms <= 1e-12
    if np.any(qn[zero_rows] < -1e-9):
        raise EmptyPolytope("projection of an empty set")
    Hn, qn, norms = Hn[~zero_rows], qn[~zero_rows], norms[~zero_rows]
    Hn = Hn / norms[:, None]
    qn = qn / norms
    return _dedupe_rows(Hn, qn, tol=1e-12)


# --------------------------------------------------------------------------
# membership tests


def ri_membership(x, points) -> RiCertificate:
    """Max-min convex weights expressing ``x`` over ``points``.

    Solves  max t  s.t.  sum_i w_i p_i = x,  sum_i w_i = 1,  w_i >= t,  w >= 0.
    A positive margin certifies x lies in the relative interior of the hull.
    """
    P = _points(points)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != P.shape[1]:
        raise DimensionMismatch("query point and points differ in dimension")
    k = P.shape[0]
    # the test is invariant under translation and scaling; normalise so that
    # tiny or huge coordinates do not meet the LP's absolute tolerances
    D = P - x
    scale = np.max(np.abs(D))
    if scale == 0.0:
        return RiCertificate(np.full(k, 1.0 / k), 1.0 / k)
    D = D / scale
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.zeros((P.shape[1] + 1, k + 1))
    A_eq[:-1, :k] = D.T
    A_eq[-1, :k] = 1.0
    b_eq = np.concatenate([np.zeros(P.shape[1]), [1.0]])
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    lb = np.zeros(k + 1)
    lb[-1] = -np.inf
    ub = np.ones(k + 1)
    sol = solve_lp(LpProblem.build(c, A_ub, np.zeros(k), A_eq, b_eq, lb, ub))
    if not sol.optimal:
        return RiCertificate(None, -math.inf)
    w = np.clip(sol.point[:k], 0.0, None)
    w = w / w.sum()
    return RiCertificate(w, float(sol.point[-1]))


def inclusion(inner: VPolytope, outer: HPolytope, tol: float = 1e-9) -> bool:
    if inner.dim != outer.dim:
        raise DimensionMismatch("inclusion between different dimensions")
    if outer.num_rows == 0:
        return True
    return bool(np.all(inner.vertices @ outer.H.T <= outer.q + tol))


def inclusion_excess(inner: HPolytope, outer: HPolytope) -> float:
    """max over rows of outer of (support of inner along the row) - rhs."""
    if inner.dim != outer.dim:
        raise DimensionMismatch("inclusion between different dimensions")
    worst = -math.inf
    for h, b in zip(outer.H, outer.q):
        sol = solve_lp(LpProblem.build(-h, inner.H, inner.q))
        if sol.status is LpStatus.INFEASIBLE:
            return -math.inf
        if sol.status is LpStatus.UNBOUNDED:
            return math.inf
        worst = max(worst, -sol.objective_value - b)
    return worst if outer.num_rows else -math.inf


def h_inclusion(inner: HPolytope, outer: HPolytope, tol: float = 1e-9) -> bool:
    """inner ⊆ outer (inflated by tol), decided by one support LP per outer row."""
    return inclusion_excess(inner, outer) <= tol


def mutually_include(a: HPolytope, b: HPolytope, tol: float) -> bool:
    """Strict mutual tol-inclusion: both support excesses must be below tol."""
    return inclusion_excess(a, b) < tol and inclusion_excess(b, a) < tol


# --------------------------------------------------------------------------
# volume


def volume(P: VPolytope, seed: int = 0, method: str = "auto",
           samples: int = 200_000) -> VolumeEstimate:
    """Volume of ch(vertices).

    ``auto`` uses an exact centroid-fan triangulation up to three dimensions
    and bounding-box rejection sampling beyond; ``exact`` and ``mc`` force
    either route in any dimension.
    """
    V = _dedupe(P.vertices)
    n = V.shape[1]
    _, basis, _ = affine_hull(V)
    if basis.shape[1] < n:
        return VolumeEstimate(0.0, 0.0, degenerate=True, method="degenerate")
    if method == "auto":
        method = "exact" if n <= 3 else "mc"
    if method == "exact":
        return VolumeEstimate(_fan_volume(V), 0.0, False, "exact")
    if method == "mc":
        return _mc_volume(V, seed, samples)
    raise ValueError(f"unknown volume method {method!r}")


def _fan_volume(V: np.ndarray) -> float:
    n = V.shape[1]
    if n == 1:
        return float(V.max() - V.min())
    hull = _qhull(V)
    c = V[hull.vertices].mean(axis=0)
    total = 0.0
    for simplex in hull.simplices:
        total += abs(np.linalg.det(V[simplex] - c))
    return total / math.factorial(n)


def _mc_volume(V: np.ndarray, seed: int, samples: int) -> VolumeEstimate:
    rng = np.random.default_rng(seed)
    lo, hi = V.min(axis=0), V.max(axis=0)
    box = float(np.prod(hi - lo))
    Hp = convex_hull(V)
    hits = 0
    done = 0
    batch = 50_000
    while done < samples:
        k = min(batch, samples - done)
        X = lo + (hi - lo) * rng.random((k, V.shape[1]))
        hits += int(np.sum(np.all(X @ Hp.H.T <= Hp.q, axis=1)))
        done += k
    frac = hits / samples
    se = box * math.sqrt(max(frac * (1 - frac), 0.0) / samples)
    return VolumeEstimate(box * frac, se, False, "mc")


# --------------------------------------------------------------------------
# JSON


def polytope_to_json(P) -> dict:
    return P.to_json()


def polytope_from_json(data: dict):
    if "V" in data:
        return VPolytope(np.asarray(data["V"], dtype=float))
    if "H" in data and "q" in data:
        q = np.asarray(data["q"], dtype=float)
        H = np.asarray(data["H"], dtype=float)
        if H.size == 0:
            raise DegenerateInput("an H-polytope JSON record needs its dimension; use 'box'")
        return HPolytope(H.reshape(len(q), -1), q)
    if "box" in data:
        return HPolytope.box(data["box"]["lb"], data["box"]["ub"])
    raise DegenerateInput("polytope JSON must contain 'H'/'q', 'V' or 'box'")
