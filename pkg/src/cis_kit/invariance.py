"""Backward reachability for x+ = A x + B u under polytopic constraints.

The predecessor operator is realised exactly by lifting to (x, u) and
eliminating u; controlled invariance of a polytope is decided on its
extreme points, which is sufficient for compact convex sets.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .errors import DimensionMismatch, EmptyPolytope, SeedNotInvariant, DegenerateInput
from .lp import LpProblem, solve_lp
from .polytope import (MAX_FM_ROWS, HPolytope, VPolytope, inclusion_excess, project,
                       remove_redundancy, vertex_enumeration)

log = logging.getLogger(__name__)

__all__ = [
    "LinearSystem",
    "ConstraintSet",
    "TraceMode",
    "FixedPointTrace",
    "pre",
    "is_controlled_invariant",
    "backward_fixed_point",
    "maximal_ci",
]


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)

    def rollout(self, x0, inputs) -> np.ndarray:
        """States x_0 ... x_T for the input sequence u_0 ... u_{T-1}."""
        xs = [np.asarray(x0, dtype=float)]
        for u in inputs:
            xs.append(self.step(xs[-1], u))
        return np.array(xs)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    X: HPolytope
    U: HPolytope

    def __post_init__(self):
        if self.X.is_empty() or self.U.is_empty():
            raise EmptyPolytope("state and input constraint sets must be non-empty")
        self.U.bounding_box()      # raises UnboundedPolytope

    def check(self, sys: LinearSystem) -> None:
        if self.X.dim != sys.n or self.U.dim != sys.m:
            raise DimensionMismatch(
                f"constraints are ({self.X.dim}, {self.U.dim})-dimensional, system is "
                f"({sys.n}, {sys.m})")


class TraceMode(enum.Enum):
    OUTSIDE_IN = "outside-in"
    INSIDE_OUT = "inside-out"


@dataclass
class FixedPointTrace:
    iterates: List[HPolytope]
    converged: bool
    iterations: int
    mode: TraceMode
    empty: bool = False
    invariant_flags: List[bool] = field(default_factory=list)

    @property
    def final(self) -> HPolytope:
        return self.iterates[-1]

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "empty": self.empty,
            "invariant_flags": list(self.invariant_flags),
            "iterates": [P.to_json() for P in self.iterates],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FixedPointTrace":
        its = [HPolytope(np.asarray(d["H"], dtype=float).reshape(len(d["q"]), -1), d["q"])
               for d in data["iterates"]]
        return cls(its, bool(data["converged"]), int(data["iterations"]),
                   TraceMode(data["mode"]), bool(data.get("empty", False)),
                   list(data.get("invariant_flags", [])))


def pre(sys: LinearSystem, target: HPolytope, cs: ConstraintSet,
        max_rows: int = MAX_FM_ROWS) -> HPolytope:
    """{x in X : exists u in U with A x + B u in target}, redundancy-free."""
    cs.check(sys)
    if target.dim != sys.n:
        raise DimensionMismatch("target dimension differs from the state dimension")
    n, m = sys.n, sys.m
    X, U = cs.X, cs.U
    lifted = HPolytope(
        np.vstack([
            np.hstack([target.H @ sys.A, target.H @ sys.B]),
            np.hstack([X.H, np.zeros((X.num_rows, m))]),
            np.hstack([np.zeros((U.num_rows, n)), U.H]),
        ]),
        np.concatenate([target.q, X.q, U.q]),
    )
    if lifted.is_empty():
        raise EmptyPolytope("no state can reach the target")
    if m == 0:
        return remove_redundancy(lifted)
    return project(lifted, list(range(n)), max_rows=max_rows)


def is_controlled_invariant(sys: LinearSystem, S: Union[VPolytope, HPolytope],
                            cs: ConstraintSet, tol: float = 1e-9) -> bool:
    """Check S ⊆ X and that every extreme point of S has an admissible successor in S.

    For a V-polytope the successor test is  A v + B u = sum_i w_i s_i  with
    convex weights w; for an H-polytope it is  H (A v + B u) <= q.
    """
    cs.check(sys)
    if S.dim != sys.n:
        raise DimensionMismatch("set dimension differs from the state dimension")
    if isinstance(S, HPolytope):
        try:
            V = vertex_enumeration(S).vertices
        except EmptyPolytope:
            return True
        H_S, q_S = S.H, S.q
    else:
        V = S.vertices
        H_S = q_S = None
    if np.any(V @ cs.X.H.T > cs.X.q + tol):
        return False
    return all(_has_successor(sys, v, V, H_S, q_S, cs.U, tol) for v in V)


def _has_successor(sys, v, V, H_S, q_S, U, tol) -> bool:
    n, m = sys.n, sys.m
    Av = sys.A @ v
    if H_S is not None:
        A_ub = np.vstack([H_S @ sys.B, U.H])
        b_ub = np.concatenate([q_S + tol - H_S @ Av, U.q + tol])
        return solve_lp(LpProblem.build(np.zeros(m), A_ub, b_ub)).optimal
    k = V.shape[0]
    # variables (u, w): A v + B u - V^T w = 0, sum w = 1, w >= 0, u in U
    A_eq = np.zeros((n + 1, m + k))
    A_eq[:n, :m] = sys.B
    A_eq[:n, m:] = -V.T
    A_eq[n, m:] = 1.0
    b_eq = np.concatenate([-Av, [1.0]])
    A_ub = np.hstack([U.H, np.zeros((U.num_rows, k))])
    lb = np.concatenate([np.full(m, -np.inf), np.zeros(k)])
    return solve_lp(LpProblem.build(np.zeros(m + k), A_ub, U.q + tol, A_eq, b_eq, lb)).optimal


def backward_fixed_point(sys: LinearSystem, seed_set: HPolytope, cs: ConstraintSet,
                         mode: TraceMode = TraceMode.OUTSIDE_IN, tol: float = 1e-6,
                         max_iter: int = 100, check_invariance: bool = True,
                         max_rows: int = MAX_FM_ROWS) -> FixedPointTrace:
    """Iterate H_{k+1} = Pre(H_k) until two consecutive iterates agree within ``tol``.

    Agreement is strict mutual inclusion: each set's support along every row
    of the other exceeds that row's offset by less than ``tol`` (so tol=0
    never converges).  Inside-out runs require a controlled invariant seed.
    """
    mode = TraceMode(mode)
    cs.check(sys)
    flags: List[bool] = []
    if mode is TraceMode.INSIDE_OUT:
        if not is_controlled_invariant(sys, seed_set, cs, tol=1e-7):
            raise SeedNotInvariant("inside-out iteration needs a controlled invariant seed")
        flags.append(True)
    current = remove_redundancy(seed_set)
    iterates = [current]
    for k in range(1, max_iter + 1):
        try:
            nxt = pre(sys, current, cs, max_rows=max_rows)
        except EmptyPolytope:
            log.info("backward iteration %d produced the empty set", k)
            return FixedPointTrace(iterates, True, k, mode, empty=True, invariant_flags=flags)
        iterates.append(nxt)
        if mode is TraceMode.INSIDE_OUT and check_invariance:
            flags.append(is_controlled_invariant(sys, nxt, cs, tol=1e-7))
        gap = max(inclusion_excess(current, nxt), inclusion_excess(nxt, current))
        log.debug("iteration %d: %d rows, gap %.3g", k, nxt.num_rows, gap)
        if gap < tol:
            return FixedPointTrace(iterates, True, k, mode, invariant_flags=flags)
        current = nxt
    return FixedPointTrace(iterates, False, max_iter, mode, invariant_flags=flags)


def maximal_ci(sys: LinearSystem, cs: ConstraintSet, tol: float = 1e-6,
               max_iter: int = 100, max_rows: int = MAX_FM_ROWS) -> FixedPointTrace:
    """Outside-in iteration started from the state constraint set."""
    return backward_fixed_point(sys, cs.X, cs, TraceMode.OUTSIDE_IN, tol, max_iter,
                                max_rows=max_rows)
