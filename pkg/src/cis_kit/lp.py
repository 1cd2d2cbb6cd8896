"""Linear programming core.

Every geometric and control routine in the package reduces to LPs of the form

    minimize    c^T x
    subject to  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub

Two interchangeable engines are provided: a dense two-phase primal simplex
written here (``"simplex"``) and SciPy's HiGHS wrapper (``"highs"``).  Both
return the same :class:`LpSolution`, including Lagrange multipliers for the
original (non-standardised) problem, so callers can certify optimality with
:func:`dual_objective` independently of the engine that produced the point.
"""
from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionMismatch, NumericalFailure

log = logging.getLogger(__name__)

__all__ = [
    "LpStatus",
    "LpProblem",
    "LpSolution",
    "LpTolerances",
    "solve_lp",
    "check_feasible",
    "dual_objective",
    "dual_residual",
    "default_backend",
    "set_default_backend",
]

BACKENDS = ("highs", "simplex")
_default_backend = os.environ.get("CIS_KIT_LP_BACKEND", "highs")


def default_backend() -> str:
    return _default_backend


def set_default_backend(name: str) -> None:
    global _default_backend
    if name not in BACKENDS:
        raise ValueError(f"unknown LP backend {name!r}; choose from {BACKENDS}")
    _default_backend = name


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpTolerances:
    feasibility: float = 1e-9
    optimality: float = 1e-9
    pivot: float = 1e-11
    # consecutive degenerate pivots before switching to Bland's rule
    degenerate_limit: int = 50
    max_iter: Optional[int] = None


def _as_matrix(a, ncols: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((0, ncols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    if a.shape[1] != ncols:
        raise DimensionMismatch(f"{name} has {a.shape[1]} columns, expected {ncols}")
    return a


def _as_vector(v, length: int, name: str, fill: float = 0.0) -> np.ndarray:
    if v is None:
        return np.full(length, fill)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != length:
        raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected {length}")
    return v


@dataclass(frozen=True)
class LpProblem:
    """An LP in inequality/equality/bounds form.  Variables default to free."""

    objective: np.ndarray
    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        nv = c.shape[0]
        A_ub = _as_matrix(self.ineq_matrix, nv, "ineq_matrix")
        b_ub = _as_vector(self.ineq_rhs, A_ub.shape[0], "ineq_rhs")
        A_eq = _as_matrix(self.eq_matrix, nv, "eq_matrix")
        b_eq = _as_vector(self.eq_rhs, A_eq.shape[0], "eq_rhs")
        lb = _as_vector(self.lower_bounds, nv, "lower_bounds", -np.inf)
        ub = _as_vector(self.upper_bounds, nv, "upper_bounds", np.inf)
        for name, arr in (("objective", c), ("ineq_matrix", A_ub), ("ineq_rhs", b_ub),
                          ("eq_matrix", A_eq), ("eq_rhs", b_eq)):
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatch(f"{name} contains non-finite entries")
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
            raise DimensionMismatch("bounds contain NaN")
        both = np.isfinite(lb) & np.isfinite(ub)
        if np.any(lb[both] > ub[both]):
            raise DimensionMismatch("lower_bounds exceed upper_bounds")
        for name, arr in (("objective", c), ("ineq_matrix", A_ub), ("ineq_rhs", b_ub),
                          ("eq_matrix", A_eq), ("eq_rhs", b_eq), ("lower_bounds", lb),
                          ("upper_bounds", ub)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def build(cls, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None):
        return cls(c, A_ub, b_ub, A_eq, b_eq, lb, ub)

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    def max_violation(self, x) -> float:
        """Largest constraint violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.ineq_matrix.shape[0]:
            worst = max(worst, float(np.max(self.ineq_matrix @ x - self.ineq_rhs)))
        if self.eq_matrix.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.eq_matrix @ x - self.eq_rhs))))
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(self.lower_bounds - x, initial=0.0)),
                        float(np.max(x - self.upper_bounds, initial=0.0)))
        return worst


@dataclass
class LpSolution:
    status: LpStatus
    point: Optional[np.ndarray] = None
    objective_value: Optional[float] = None
    # multipliers of the original problem, all >= 0 except eq_duals:
    #   c + A_ub^T ineq - A_eq^T eq - lower + upper = 0
    ineq_duals: Optional[np.ndarray] = None
    eq_duals: Optional[np.ndarray] = None
    lower_duals: Optional[np.ndarray] = None
    upper_duals: Optional[np.ndarray] = None
    iterations: int = 0
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def dual_objective(p: LpProblem, sol: LpSolution) -> float:
    """Lagrangian dual value implied by the multipliers attached to ``sol``."""
    lb = np.where(np.isfinite(p.lower_bounds), p.lower_bounds, 0.0)
    ub = np.where(np.isfinite(p.upper_bounds), p.upper_bounds, 0.0)
    return float(-p.ineq_rhs @ sol.ineq_duals + p.eq_rhs @ sol.eq_duals
                 + lb @ sol.lower_duals - ub @ sol.upper_duals)


def dual_residual(p: LpProblem, sol: LpSolution) -> float:
    """Max violation of dual feasibility (stationarity and sign conditions)."""
    grad = (p.objective + p.ineq_matrix.T @ sol.ineq_duals - p.eq_matrix.T @ sol.eq_duals
            - sol.lower_duals + sol.upper_duals)
    worst = float(np.max(np.abs(grad), initial=0.0))
    for mult in (sol.ineq_duals, sol.lower_duals, sol.upper_duals):
        worst = max(worst, float(np.max(-mult, initial=0.0)))
    # multipliers on infinite bounds must vanish
    worst = max(worst, float(np.max(np.abs(sol.lower_duals[~np.isfinite(p.lower_bounds)]), initial=0.0)))
    worst = max(worst, float(np.max(np.abs(sol.upper_duals[~np.isfinite(p.upper_bounds)]), initial=0.0)))
    return worst


def solve_lp(p: LpProblem, backend: Optional[str] = None,
             tol: LpTolerances = LpTolerances()) -> LpSolution:
    backend = backend or _default_backend
    if backend == "highs":
        return _solve_highs(p, tol)
    if backend == "simplex":
        return _DenseSimplex(p, tol).solve()
    raise ValueError(f"unknown LP backend {backend!r}")


def check_feasible(p: LpProblem, backend: Optional[str] = None,
                   tol: LpTolerances = LpTolerances()) -> bool:
    zero = LpProblem(np.zeros(p.num_vars), p.ineq_matrix, p.ineq_rhs, p.eq_matrix,
                     p.eq_rhs, p.lower_bounds, p.upper_bounds)
    return solve_lp(zero, backend, tol).optimal


# --------------------------------------------------------------------------
# HiGHS


def _solve_highs(p: LpProblem, tol: LpTolerances) -> LpSolution:
    nv = p.num_vars
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(p.lower_bounds, p.upper_bounds)]
    args = dict(
        A_ub=p.ineq_matrix if p.ineq_matrix.shape[0] else None,
        b_ub=p.ineq_rhs if p.ineq_matrix.shape[0] else None,
        A_eq=p.eq_matrix if p.eq_matrix.shape[0] else None,
        b_eq=p.eq_rhs if p.eq_matrix.shape[0] else None,
        bounds=bounds,
    )
    tight = {"primal_feasibility_tolerance": max(tol.feasibility, 1e-10),
             "dual_feasibility_tolerance": max(tol.optimality, 1e-10)}
    # badly scaled problems occasionally end in an "unknown" status; retry with
    # the other HiGHS algorithms before giving up
    attempts = [("highs", tight), ("highs-ipm", tight), ("highs-ds", {}), ("highs-ipm", {})]
    for method, options in attempts:
        res = linprog(p.objective, method=method, options=options, **args)
        if res.status in (0, 2, 3):
            break
        log.debug("HiGHS (%s) returned %s; retrying", method, res.message)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, backend="highs")
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, backend="highs")
    if res.status != 0:
        raise NumericalFailure(f"HiGHS failed: {res.message}")

    def marg(block, size):
        if size == 0 or block is None or getattr(block, "marginals", None) is None:
            return np.zeros(size)
        return np.asarray(block.marginals, dtype=float)

    return LpSolution(
        LpStatus.OPTIMAL,
        point=np.asarray(res.x, dtype=float),
        objective_value=float(res.fun),
        ineq_duals=-marg(res.get("ineqlin"), p.ineq_matrix.shape[0]),
        eq_duals=marg(res.get("eqlin"), p.eq_matrix.shape[0]),
        lower_duals=marg(res.get("lower"), nv),
        upper_duals=-marg(res.get("upper"), nv),
        iterations=int(res.get("nit", 0)),
        backend="highs",
    )


# --------------------------------------------------------------------------
# dense two-phase simplex


class _DenseSimplex:
    """Tableau simplex on the standard form  min c^T z, A z = b, z >= 0.

    Original variables are rewritten as x = offset + M z: a finite lower bound
    shifts, a finite upper bound only flips, and free variables are split.
    Finite upper bounds on shifted variables become extra inequality rows.
    """

    def __init__(self, p: LpProblem, tol: LpTolerances):
        self.p = p
        self.tol = tol
        self._standardize()

    def _standardize(self):
        p = self.p
        nv = p.num_vars
        lb, ub = p.lower_bounds, p.upper_bounds
        offset = np.zeros(nv)
        cols = []                      # (variable, sign)
        kinds = []                     # per-column: "lo", "up", "free+", "free-"
        ub_rows = []                   # (column index, bound width)
        for j in range(nv):
            if np.isfinite(lb[j]):
                offset[j] = lb[j]
                cols.append((j, 1.0))
                kinds.append("lo")
                if np.isfinite(ub[j]):
                    ub_rows.append((len(cols) - 1, ub[j] - lb[j]))
            elif np.isfinite(ub[j]):
                offset[j] = ub[j]
                cols.append((j, -1.0))
                kinds.append("up")
            else:
                cols.append((j, 1.0))
                kinds.append("free+")
                cols.append((j, -1.0))
                kinds.append("free-")
        nz = len(cols)
        M = np.zeros((nv, nz))
        for k, (j, s) in enumerate(cols):
            M[j, k] = s

        A_ub = p.ineq_matrix @ M
        b_ub = p.ineq_rhs - p.ineq_matrix @ offset
        if ub_rows:
            extra = np.zeros((len(ub_rows), nz))
            for r, (k, width) in enumerate(ub_rows):
                extra[r, k] = 1.0
            A_ub = np.vstack([A_ub, extra])
            b_ub = np.concatenate([b_ub, [w for _, w in ub_rows]])
        A_eq = p.eq_matrix @ M
        b_eq = p.eq_rhs - p.eq_matrix @ offset

        n_ub, n_eq = A_ub.shape[0], A_eq.shape[0]
        A = np.zeros((n_ub + n_eq, nz + n_ub))
        A[:n_ub, :nz] = A_ub
        A[:n_ub, nz:] = np.eye(n_ub)
        A[n_ub:, :nz] = A_eq
        b = np.concatenate([b_ub, b_eq])
        flip = b < 0
        A[flip] *= -1
        b[flip] *= -1

        self.M, self.offset, self.kinds, self.ub_rows = M, offset, kinds, ub_rows
        self.col_var = [j for j, _ in cols]
        self.nz, self.n_ub, self.n_eq = nz, n_ub, n_eq
        self.A, self.b, self.flip = A, b, flip
        self.c = np.concatenate([M.T @ p.objective, np.zeros(n_ub)])
        self.const = float(p.objective @ offset)

    # -- tableau mechanics --------------------------------------------------

    def _pivot(self, T, basis, r, e):
        T[r] /= T[r, e]
        col = T[:, e].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, e] = 0.0
        T[r, e] = 1.0
        basis[r] = e

    def _run(self, T, basis, ncols, allowed):
        """Optimise the tableau whose last row holds reduced costs (rhs in last col)."""
        tol = self.tol
        m = T.shape[0] - 1
        limit = tol.max_iter or 50 * (m + ncols) + 1000
        degenerate = 0
        it = 0
        while True:
            if it >= limit:
                raise NumericalFailure("simplex iteration limit reached")
            rc = T[-1, :ncols]
            cand = np.flatnonzero((rc < -tol.optimality) & allowed)
            if cand.size == 0:
                return "optimal", it
            bland = degenerate >= tol.degenerate_limit
            e = int(cand[0]) if bland else int(cand[np.argmin(rc[cand])])
            column = T[:m, e]
            rows = np.flatnonzero(column > tol.pivot)
            if rows.size == 0:
                return "unbounded", it
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            if bland:
                r = int(ties[np.argmin([basis[i] for i in ties])])
            else:
                r = int(ties[np.argmax(np.abs(column[ties]))])
            degenerate = degenerate + 1 if T[r, -1] <= tol.feasibility else 0
            self._pivot(T, basis, r, e)
            it += 1

    def solve(self) -> LpSolution:
        A, b, tol = self.A, self.b, self.tol
        m, ncols = A.shape
        if m == 0:
            return self._trivial()

        # initial basis: unflipped slack columns, artificials elsewhere
        basis = [-1] * m
        for i in range(self.n_ub):
            if not self.flip[i]:
                basis[i] = self.nz + i
        art_rows = [i for i in range(m) if basis[i] < 0]
        na = len(art_rows)
        T = np.zeros((m + 1, ncols + na + 1))
        T[:m, :ncols] = A
        T[:m, -1] = b
        for k, i in enumerate(art_rows):
            T[i, ncols + k] = 1.0
            basis[i] = ncols + k

        iters = 0
        if na:
            # phase 1: minimise the sum of artificials
            T[-1, :] = 0.0
            for i in art_rows:
                T[-1, :] -= T[i, :]
            T[-1, ncols:ncols + na] = 0.0
            allowed = np.ones(ncols + na, dtype=bool)
            _, it = self._run(T, basis, ncols + na, allowed)
            iters += it
            scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
            if -T[-1, -1] > tol.feasibility * scale * 10:
                return LpSolution(LpStatus.INFEASIBLE, iterations=iters, backend="simplex")
            # drive artificials out of the basis, dropping redundant rows
            keep = np.ones(m + 1, dtype=bool)
            for r in range(m):
                if basis[r] >= ncols:
                    row = np.abs(T[r, :ncols])
                    j = int(np.argmax(row))
                    if row[j] > 1e-9:
                        self._pivot(T, basis, r, j)
                    else:
                        keep[r] = False
            T = T[keep]
            basis = [bv for bv, k in zip(basis, keep[:-1]) if k]
            T = np.hstack([T[:, :ncols], T[:, -1:]])
            m = T.shape[0] - 1

        # phase 2
        cb = self.c[basis]
        T[-1, :ncols] = self.c - cb @ T[:m, :ncols]
        T[-1, -1] = -cb @ T[:m, -1]
        status, it = self._run(T, basis, ncols, np.ones(ncols, dtype=bool))
        iters += it
        if status == "unbounded":
            return LpSolution(LpStatus.UNBOUNDED, iterations=iters, backend="simplex")
        return self._extract(T, basis, iters)

    def _trivial(self) -> LpSolution:
        # no rows at all: each standard column independently at zero unless cost < 0
        if np.any(self.c < -self.tol.optimality):
            return LpSolution(LpStatus.UNBOUNDED, backend="simplex")
        z = np.zeros(self.nz)
        return self._package(z, np.zeros(0), iters=0)

    def _extract(self, T, basis, iters) -> LpSolution:
        m = T.shape[0] - 1
        ncols = self.A.shape[1]
        z = np.zeros(ncols)
        z[basis] = T[:m, -1]
        # refine basic values with a fresh factorisation of the basis matrix
        rows = self._row_subset(basis)
        B = self.A[np.ix_(rows, basis)]
        try:
            zb = np.linalg.solve(B, self.b[rows])
            if np.all(zb >= -self.tol.feasibility) and np.all(np.isfinite(zb)):
                z[:] = 0.0
                z[basis] = np.maximum(zb, 0.0)
            y_rows = np.linalg.solve(B.T, self.c[basis])
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular final basis") from None
        y = np.zeros(self.A.shape[0])
        y[rows] = y_rows
        return self._package(z, y, iters)

    def _row_subset(self, basis):
        """Rows of A kept after phase 1 (the basis matrix must be square)."""
        m = len(basis)
        if m == self.A.shape[0]:
            return np.arange(m)
        # rows dropped as redundant: pick an independent subset via QR pivoting
        from scipy.linalg import qr
        _, _, piv = qr(self.A[:, basis].T, pivoting=True)
        return np.sort(piv[:m])

    def _package(self, z, y, iters) -> LpSolution:
        p = self.p
        nz = self.nz
        x = self.offset + self.M @ z[:nz]
        obj = float(p.objective @ x)

        # standard-form reduced costs give the bound multipliers
        rc = self.c - self.A.T @ y if y.size else self.c.copy()
        sign = np.where(self.flip, -1.0, 1.0)
        ys = y * sign if y.size else np.zeros(self.A.shape[0])
        n_orig = p.ineq_matrix.shape[0]
        ineq = -ys[:n_orig]
        eq = ys[self.n_ub:]
        lower = np.zeros(p.num_vars)
        upper = np.zeros(p.num_vars)
        for k, (kind, j) in enumerate(zip(self.kinds, self.col_var)):
            if kind == "lo":
                lower[j] += rc[k]
            elif kind == "up":
                upper[j] += rc[k]
        for r, (k, _) in enumerate(self.ub_rows):
            upper[self.col_var[k]] += -ys[n_orig + r]
        return LpSolution(LpStatus.OPTIMAL, point=x, objective_value=obj,
                          ineq_duals=ineq, eq_duals=eq, lower_duals=lower,
                          upper_duals=upper, iterations=iters, backend="simplex")
