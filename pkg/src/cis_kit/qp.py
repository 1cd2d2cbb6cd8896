"""Strictly convex QP via the Goldfarb-Idnani dual active-set method.

    minimize    1/2 x^T H x + f^T x
    subject to  A_ub x <= b_ub,   A_eq x = b_eq

Equalities are removed up front by a null-space parametrisation
x = x_p + Z w, so the active-set loop only ever sees inequalities.  Only the
projected Hessian Z^T H Z needs to be positive definite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, null_space, qr, solve_triangular

from .errors import DimensionMismatch, NumericalFailure

__all__ = ["QpResult", "solve_qp"]


@dataclass
class QpResult:
    status: str                 # "optimal" | "infeasible"
    x: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_qp(H, f, A_ub=None, b_ub=None, A_eq=None, b_eq=None, x_feasible=None,
             tol: float = 1e-10, max_iter: Optional[int] = None) -> QpResult:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    f = np.asarray(f, dtype=float).reshape(-1)
    n = f.shape[0]
    if H.shape != (n, n):
        raise DimensionMismatch("Hessian shape does not match the linear term")
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float)).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    if A_ub.shape[0] != b_ub.shape[0]:
        raise DimensionMismatch("inequality block sizes differ")
    H = 0.5 * (H + H.T)

    if A_eq is not None and np.size(A_eq):
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, n)
        b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
        if x_feasible is not None:
            xp = np.asarray(x_feasible, dtype=float).reshape(-1)
        else:
            xp = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0]
        scale = 1.0 + np.max(np.abs(b_eq), initial=0.0)
        if np.max(np.abs(A_eq @ xp - b_eq), initial=0.0) > 1e-8 * scale:
            return QpResult("infeasible", None, None)
        Z = null_space(A_eq)
        if Z.shape[1] == 0:
            if A_ub.shape[0] and np.max(A_ub @ xp - b_ub) > 1e-8:
                return QpResult("infeasible", None, None)
            return QpResult("optimal", xp, float(0.5 * xp @ H @ xp + f @ xp))
        Hr = Z.T @ H @ Z
        fr = Z.T @ (H @ xp + f)
        res = _goldfarb_idnani(Hr, fr, -(A_ub @ Z).T, -(b_ub - A_ub @ xp), tol, max_iter)
        if not res.optimal:
            return res
        x = xp + Z @ res.x
        return QpResult("optimal", x, float(0.5 * x @ H @ x + f @ x), res.iterations)

    res = _goldfarb_idnani(H, f, -A_ub.T, -b_ub, tol, max_iter)
    if res.optimal:
        res.objective = float(0.5 * res.x @ H @ res.x + f @ res.x)
    return res


def _goldfarb_idnani(G, a, N, b, tol, max_iter) -> QpResult:
    """min 1/2 x'Gx + a'x  s.t.  N[:, i]' x >= b[i]."""
    n = a.shape[0]
    try:
        L = cholesky(G, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalFailure("QP Hessian is not positive definite") from None
    J0 = solve_triangular(L, np.eye(n), lower=True).T      # J0 J0' = G^-1
    x = -J0 @ (J0.T @ a)
    norms = np.linalg.norm(N, axis=0)
    norms[norms == 0] = 1.0
    active: list[int] = []
    u = np.zeros(0)
    limit = max_iter or 20 * (n + N.shape[1]) + 100
    it = 0
    while True:
        slack = (N.T @ x - b) / norms
        if active:
            slack[active] = np.inf
        if slack.size == 0 or slack.min() >= -tol:
            return QpResult("optimal", x, None, it)
        p = int(np.argmin(slack))
        n_p = N[:, p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > limit:
                raise NumericalFailure("QP active-set iteration limit reached")
            q = len(active)
            if q:
                Q, R = qr(J0.T @ N[:, active], mode="full")
                J = J0 @ Q
                R = R[:q, :q]
            else:
                J = J0
            d = J.T @ n_p
            z = J[:, q:] @ d[q:]
            r = solve_triangular(R, d[:q]) if q else np.zeros(0)

            t1, k = np.inf, -1
            for j in range(q):
                if r[j] > tol:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ n_p)
            s_p = float(n_p @ x - b[p])
            t2 = -s_p / zn if zn > tol * max(1.0, np.linalg.norm(n_p)) ** 2 else np.inf

            if not np.isfinite(t1) and not np.isfinite(t2):
                return QpResult("infeasible", None, None, it)
            if not np.isfinite(t2):
                u_plus[:q] -= t1 * r
                u_plus[q] += t1
                del active[k]
                u_plus = np.delete(u_plus, k)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[k]
            u_plus = np.delete(u_plus, k)
