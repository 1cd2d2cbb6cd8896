"""Trajectory certificates of controlled invariance.

A certificate is a finite admissible trajectory x_0 ... x_N whose terminal
state sits, together with the l1-ball of radius d around it, inside the
convex hull of x_0 ... x_{N-1}.  The hull of those states is then a
controlled invariant set.  Finding one is a bilinear program (states times
convex weights); it is attacked here by alternating two LPs:

* phase A fixes the weights and optimises states, inputs and the margin d;
* phase B fixes the states and optimises weights and d.

Runs begin in an elastic form: d is pinned to a positive target and the
residuals of the hull equations are minimised.  Pinning d matters because
otherwise collapsing the whole trajectory onto an equilibrium (d = 0) is a
cheap way to zero the residual.  The target is lowered when the residual
stalls.  Once the residual vanishes the slacks are dropped and d is
maximised; from then on every round keeps the previous point feasible, so d
can only grow.  Runs are restarted from seeded random rollouts and the
largest margin wins.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space, solve_discrete_are
from scipy.signal import place_poles

from .errors import (AmbiguousStates, InvalidCertificate, InvalidHorizon, MarginCollapse,
                     NumericalFailure)
from .invariance import (ConstraintSet, FixedPointTrace, LinearSystem, TraceMode,
                         backward_fixed_point, is_controlled_invariant)
from .lp import LpProblem, solve_lp
from .polytope import (HPolytope, VPolytope, affine_hull, convex_hull, hull_vertices, inclusion,
                       ri_membership)

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "FeasibilityCertificate",
    "FeedbackLaw",
    "TrajectoryController",
    "VerificationReport",
    "RefinementResult",
    "probe_directions",
    "solve_open_loop",
    "solve_closed_loop",
    "horizon_search",
    "evaluate_feedback",
    "verify_certificate",
    "program_residual",
    "build_invariant",
    "extract_controller",
    "inputs_from_controller",
    "terminal_weights",
    "propagation_weights",
    "propagate_certificate",
    "extend_certificate",
    "refine_pipeline",
    "fit_weights",
]


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 8
    seed: int = 0
    max_rounds: int = 100
    stagnation_tol: float = 1e-7
    stagnation_rounds: int = 3
    d_min: float = 1e-7
    # first elastic target for d, as a fraction of the smallest side of X's bounding box
    target_fraction: float = 0.05
    target_shrink: float = 0.25
    slack_tol: float = 1e-10
    # candidate feedback gains for the closed-loop search; None -> automatic
    gains: Optional[Tuple[np.ndarray, ...]] = None
    workers: Optional[int] = None


def probe_directions(n: int) -> np.ndarray:
    """Rows s_j = (-1)^r e_k with j = r*n + k: first +e_0..+e_{n-1}, then the negatives."""
    return np.vstack([np.eye(n), -np.eye(n)])


@dataclass(frozen=True)
class FeedbackLaw:
    K: np.ndarray
    b: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return self.K @ np.asarray(x, dtype=float) + self.b


@dataclass(eq=False)
class FeasibilityCertificate:
    states: np.ndarray          # (N+1, n)
    inputs: np.ndarray          # (N, m)
    weights: np.ndarray         # (N, 2n), column j combines the probe point for s_j
    margin: float               # d
    feedback: Optional[FeedbackLaw] = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(self.states.shape[0] - 1, -1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(self.states.shape[0] - 1, -1)
        self.margin = float(self.margin)

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def epsilon(self) -> float:
        """Euclidean ball radius implied by the l1 margin."""
        return self.margin / math.sqrt(self.n)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def window(self) -> np.ndarray:
        return self.states[:-1]

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "lambda": self.weights.tolist(),
            "d": self.margin,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeasibilityCertificate":
        try:
            cert = cls(np.asarray(data["states"], dtype=float),
                       np.asarray(data["inputs"], dtype=float),
                       np.asarray(data["lambda"], dtype=float), float(data["d"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidCertificate(f"malformed certificate record: {exc}") from exc
        if int(data.get("N", cert.N)) != cert.N:
            raise InvalidCertificate("field N disagrees with the number of states")
        return cert


# --------------------------------------------------------------------------
# the two LP phases


def _sample_in(P: HPolytope, rng, tries: int = 200) -> np.ndarray:
    lo, hi = P.bounding_box()
    for _ in range(tries):
        x = lo + (hi - lo) * rng.random(P.dim)
        if P.contains(x):
            return x
    return P.chebyshev_center()[0]


class _Program:
    """Index bookkeeping and the two LP phases for one (system, horizon) pair.

    Both phases take ``d_fixed``: a number pins d and minimises the summed
    slack of the hull equations; None drops the slacks and maximises d.
    """

    def __init__(self, sys: LinearSystem, cs: ConstraintSet, N: int,
                 x0: Optional[np.ndarray] = None, gain: Optional[np.ndarray] = None):
        self.sys, self.cs, self.N = sys, cs, N
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.gain = None if gain is None else np.atleast_2d(np.asarray(gain, dtype=float))
        self.S = probe_directions(sys.n)

    def phase_b(self, states: np.ndarray, d_fixed: Optional[float]):
        return _weight_lp(states, d_fixed)

    def phase_a(self, lam: np.ndarray, d_fixed: Optional[float]):
        """Trajectory LP for fixed weights.

        Returns (states (N+1, n), inputs (N, m), d, slack, b) or None when infeasible.
        """
        sys, cs, N = self.sys, self.cs, self.N
        n, m = sys.n, sys.m
        J = 2 * n
        elastic = d_fixed is not None
        closed = self.gain is not None
        nx = n * (N + 1)
        nu = m * N
        ix_d = nx + nu
        ix_b = ix_d + 1
        nb = m if closed else 0
        ix_e = ix_b + nb
        ns = 2 * n * J if elastic else 0
        nv = ix_e + ns

        def xs(i):
            return slice(n * i, n * (i + 1))

        def us(i):
            return slice(nx + m * i, nx + m * (i + 1))

        c = np.zeros(nv)
        if elastic:
            c[ix_e:] = 1.0
        else:
            c[ix_d] = -1.0
        eq_rows, eq_rhs = [], []
        for i in range(N):
            r = np.zeros((n, nv))
            r[:, xs(i + 1)] = np.eye(n)
            r[:, xs(i)] = -sys.A
            r[:, us(i)] = -sys.B
            eq_rows.append(r)
            eq_rhs.append(np.zeros(n))
            if closed:
                r = np.zeros((m, nv))
                r[:, us(i)] = np.eye(m)
                r[:, xs(i)] = -self.gain
                r[:, ix_b:ix_b + m] = -np.eye(m)
                eq_rows.append(r)
                eq_rhs.append(np.zeros(m))
        for j in range(J):
            # x_N + d s_j - sum_i lam_ij x_i (+ e+ - e-) = 0
            r = np.zeros((n, nv))
            r[:, xs(N)] = np.eye(n)
            r[:, ix_d] = self.S[j]
            for i in range(N):
                r[:, xs(i)] -= lam[i, j] * np.eye(n)
            if elastic:
                off = ix_e + 2 * n * j
                r[:, off:off + n] = np.eye(n)
                r[:, off + n:off + 2 * n] = -np.eye(n)
            eq_rows.append(r)
            eq_rhs.append(np.zeros(n))
        if self.x0 is not None:
            r = np.zeros((n, nv))
            r[:, xs(0)] = np.eye(n)
            eq_rows.append(r)
            eq_rhs.append(self.x0)
        X, U = cs.X, cs.U
        ub_rows, ub_rhs = [], []
        for i in range(N):
            r = np.zeros((X.num_rows, nv))
            r[:, xs(i)] = X.H
            ub_rows.append(r)
            ub_rhs.append(X.q)
            r = np.zeros((U.num_rows, nv))
            r[:, us(i)] = U.H
            ub_rows.append(r)
            ub_rhs.append(U.q)
        lb = np.full(nv, -np.inf)
        ub = np.full(nv, np.inf)
        lb[ix_e:] = 0.0
        if elastic:
            lb[ix_d] = ub[ix_d] = d_fixed
        sol = solve_lp(LpProblem.build(c, np.vstack(ub_rows), np.concatenate(ub_rhs),
                                       np.vstack(eq_rows), np.concatenate(eq_rhs), lb, ub))
        if not sol.optimal:
            return None
        z = sol.point
        states = z[:nx].reshape(N + 1, n)
        inputs = z[nx:nx + nu].reshape(N, m)
        slack = float(np.sum(z[ix_e:])) if elastic else 0.0
        b = z[ix_b:ix_b + m] if closed else None
        return states, inputs, float(z[ix_d]), slack, b


def _weight_lp(states: np.ndarray, d_fixed: Optional[float] = None):
    """Weight LP for fixed states (see ``_Program``).

    Returns (weights (N, 2n), d, slack) or None when infeasible.
    """
    N, n = states.shape[0] - 1, states.shape[1]
    J = 2 * n
    S = probe_directions(n)
    elastic = d_fixed is not None
    nl = N * J
    ns = 2 * n * J if elastic else 0
    nv = nl + 1 + ns
    c = np.zeros(nv)
    if elastic:
        c[nl + 1:] = 1.0
    else:
        c[nl] = -1.0
    A_eq = np.zeros((J * (n + 1), nv))
    b_eq = np.zeros(J * (n + 1))
    for j in range(J):
        # sum_i lam_ij x_i - d s_j + e+ - e- = x_N,  sum_i lam_ij = 1
        r = j * (n + 1)
        A_eq[r:r + n, j * N:(j + 1) * N] = states[:N].T
        A_eq[r:r + n, nl] = -S[j]
        if elastic:
            off = nl + 1 + 2 * n * j
            A_eq[r:r + n, off:off + n] = np.eye(n)
            A_eq[r:r + n, off + n:off + 2 * n] = -np.eye(n)
        b_eq[r:r + n] = states[N]
        A_eq[r + n, j * N:(j + 1) * N] = 1.0
        b_eq[r + n] = 1.0
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    ub[:nl] = 1.0
    if elastic:
        lb[nl] = ub[nl] = d_fixed
    else:
        lb[nl] = -np.inf
    sol = solve_lp(LpProblem.build(c, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub))
    if not sol.optimal:
        return None
    z = sol.point
    # drop negligible weights: they only feed badly scaled coefficients to phase A
    lam = z[:nl].reshape(J, N).T.copy()
    lam[lam < 1e-10] = 0.0
    lam /= lam.sum(axis=0, keepdims=True)
    slack = float(np.sum(z[nl + 1:])) if elastic else 0.0
    return lam, float(z[nl]), slack


def fit_weights(states) -> Optional[Tuple[np.ndarray, float]]:
    """Largest probe margin d and weights for a fixed trajectory (None if x_N is outside)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = _weight_lp(states)
    if out is None:
        return None
    return out[0], out[1]


def _polish(prog: _Program, x0, inputs, b=None) -> Optional[FeasibilityCertificate]:
    """Re-simulate the inputs exactly and refit the weights on the exact states."""
    sys = prog.sys
    if prog.gain is not None:
        K = prog.gain
        xs = [np.asarray(x0, dtype=float)]
        us = []
        for _ in range(prog.N):
            u = K @ xs[-1] + b
            us.append(u)
            xs.append(sys.step(xs[-1], u))
        states, inputs = np.array(xs), np.array(us)
    else:
        inputs = _clip_inputs(prog.cs.U, inputs)
        states = sys.rollout(x0, inputs)
    fit = fit_weights(states)
    if fit is None:
        return None
    lam, d = fit
    fb = FeedbackLaw(prog.gain.copy(), np.asarray(b, dtype=float)) if prog.gain is not None else None
    return FeasibilityCertificate(states, inputs, lam, d, fb)


def _clip_inputs(U: HPolytope, inputs: np.ndarray) -> np.ndarray:
    """Remove LP round-off outside U for box-shaped input sets."""
    lo, hi = U.bounding_box()
    box = HPolytope.box(lo, hi)
    if box.num_rows == U.num_rows and np.allclose(np.sort(box.q), np.sort(U.q)):
        return np.clip(inputs, lo, hi)
    return inputs


def _interior_equilibrium(sys: LinearSystem, cs: ConstraintSet):
    """Equilibrium (x_e, u_e) deepest inside X x U, or None if none is interior."""
    n, m = sys.n, sys.m
    X, U = cs.X, cs.U
    c = np.zeros(n + m + 1)
    c[-1] = -1.0
    A_ub = np.vstack([np.hstack([X.H, np.zeros((X.num_rows, m)), np.ones((X.num_rows, 1))]),
                      np.hstack([np.zeros((U.num_rows, n)), U.H, np.ones((U.num_rows, 1))])])
    b_ub = np.concatenate([X.q, U.q])
    A_eq = np.hstack([sys.A - np.eye(n), sys.B, np.zeros((n, 1))])
    ub = np.full(n + m + 1, np.inf)
    ub[-1] = 1.0
    sol = solve_lp(LpProblem.build(c, A_ub, b_ub, A_eq, np.zeros(n), ub=ub))
    if not sol.optimal or sol.point[-1] <= 1e-9:
        return None
    return sol.point[:n], sol.point[n:n + m]


def _excursion_trajectory(sys: LinearSystem, cs: ConstraintSet, N: int, rng):
    """Mirrored input excursion around an interior equilibrium.

    Inputs v that return the state to the equilibrium after L steps, followed
    by -v, visit a centrally symmetric point set whose centre is the final
    state.  If the first excursion spans the state space this is a
    certificate with positive margin.  Needs N >= 2n + 2.
    """
    n, m = sys.n, sys.m
    L = N // 2
    if L < n + 1:
        return None
    eq = _interior_equilibrium(sys, cs)
    if eq is None:
        return None
    x_e, u_e = eq
    # return map: x_L = sum_k A^{L-1-k} B v_k
    blocks = []
    P = np.eye(n)
    for _ in range(L):
        blocks.append(P @ sys.B)
        P = sys.A @ P
    R = np.hstack(blocks[::-1])
    Z = null_space(R)
    if Z.shape[1] == 0:
        return None
    v = (Z @ rng.standard_normal(Z.shape[1])).reshape(L, m)
    # stop the first half a little short of the equilibrium (x_L = x_e + eta) so the
    # trajectory never revisits a state; the final state moves to A^L eta, near the centre
    half = _homogeneous_rollout(sys.A, sys.B, v)
    eta = rng.standard_normal(n)
    AL = np.linalg.matrix_power(sys.A, L)
    eta *= 0.02 * np.abs(half).max() / (np.linalg.norm(eta) * max(1.0, np.linalg.norm(AL, 2)))
    v = v + np.linalg.lstsq(R, eta, rcond=None)[0].reshape(L, m)
    dev_u = np.vstack([v, -v, np.zeros((N - 2 * L, m))])
    dev_x = _homogeneous_rollout(sys.A, sys.B, dev_u)
    if np.linalg.matrix_rank(dev_x[1:L], tol=1e-9 * max(1.0, np.abs(dev_x).max())) < n:
        return None
    scale = np.inf
    for H, q, center, dev in ((cs.X.H, cs.X.q, x_e, dev_x[:-1]), (cs.U.H, cs.U.q, u_e, dev_u)):
        room = q - H @ center
        push = np.max(np.abs(dev @ H.T), axis=0)
        ok = push > 0
        if np.any(ok):
            scale = min(scale, float(np.min(room[ok] / push[ok])))
    if not np.isfinite(scale) or scale <= 0:
        return None
    scale *= 0.9
    inputs = u_e + scale * dev_u
    return sys.rollout(x_e, inputs), inputs


def _closed_loop_start(sys: LinearSystem, cs: ConstraintSet, K: np.ndarray, N: int, rng,
                       tries: int = 20):
    """Trajectory of u = K x + b scaled around its fixed point.

    With K fixed the trajectory is x* + s A_cl^k e, so the margin is s times
    that of the unit-shape trajectory; one LP picks b and the largest s.
    """
    n, m = sys.n, sys.m
    A_cl = sys.A + sys.B @ K
    try:
        G = np.linalg.solve(np.eye(n) - A_cl, sys.B)      # fixed point x* = G b
    except np.linalg.LinAlgError:
        return None
    X, U = cs.X, cs.U
    for _ in range(tries):
        e = rng.standard_normal(n)
        Y = _homogeneous_rollout(A_cl, np.zeros((n, 1)), np.zeros((N, 1)), x0=e / np.linalg.norm(e))
        fit = fit_weights(Y)
        if fit is None or fit[1] <= 0:
            continue
        # variables (b, s): maximise s with X on x_0..x_{N-1} and U on the inputs
        rows, rhs = [], []
        for k in range(N):
            rows.append(np.hstack([X.H @ G, (X.H @ Y[k])[:, None]]))
            rhs.append(X.q)
            rows.append(np.hstack([U.H @ (K @ G + np.eye(m)), (U.H @ (K @ Y[k]))[:, None]]))
            rhs.append(U.q)
        c = np.zeros(m + 1)
        c[-1] = -1.0
        lb = np.full(m + 1, -np.inf)
        lb[-1] = 0.0
        sol = solve_lp(LpProblem.build(c, np.vstack(rows), np.concatenate(rhs), lb=lb))
        if not sol.optimal or sol.point[-1] <= 0:
            continue
        b, scale = sol.point[:m], 0.9 * sol.point[-1]
        x0 = G @ b + scale * Y[0]
        xs = [x0]
        us = []
        for _ in range(N):
            us.append(K @ xs[-1] + b)
            xs.append(sys.step(xs[-1], us[-1]))
        return np.array(xs), np.array(us), b
    return None


def _homogeneous_rollout(A, B, dev_u, x0=None):
    xs = [np.zeros(A.shape[0]) if x0 is None else x0]
    for du in dev_u:
        xs.append(A @ xs[-1] + B @ du)
    return np.array(xs)


def _alternate(prog: _Program, rng, cfg: SolverConfig,
               initial: Optional[np.ndarray] = None,
               structured: bool = False) -> Optional[FeasibilityCertificate]:
    sys, cs, N = prog.sys, prog.cs, prog.N
    # randomized admissible-input rollout unless a starting trajectory is supplied
    x0 = prog.x0 if prog.x0 is not None else _sample_in(cs.X, rng)
    start = None
    if initial is None and structured and prog.x0 is None:
        if prog.gain is None:
            start = _excursion_trajectory(sys, cs, N, rng)
        else:
            # with K fixed the trajectory family is just (x_0, b); the scaled
            # fixed-point construction covers it, so no elastic fallback
            start = _closed_loop_start(sys, cs, prog.gain, N, rng)
            if start is None:
                return None
    if start is not None:
        states = start[0]
    elif initial is not None:
        states = np.asarray(initial, dtype=float)
    elif prog.gain is not None:
        b = _sample_in(cs.U, rng) * rng.random()
        xs = [x0]
        for _ in range(N):
            xs.append(sys.step(xs[-1], prog.gain @ xs[-1] + b))
        states = np.array(xs)
    else:
        inputs = np.array([_sample_in(cs.U, rng) for _ in range(N)])
        states = sys.rollout(x0, inputs)

    lo, hi = cs.X.bounding_box()
    target = cfg.target_fraction * float(np.min(hi - lo))
    fit = prog.phase_b(states, None) if start is not None else None
    if fit is not None and fit[1] > 0:
        elastic = False
    else:
        fit = prog.phase_b(states, target)
        if fit is None:
            return None
        elastic = True
    lam = fit[0]
    best = math.inf          # elastic: summed slack; hard: -d
    stall = 0
    last = (start[0], start[1], start[2] if len(start) > 2 else None) if not elastic else None
    for _ in range(cfg.max_rounds):
        try:
            a = prog.phase_a(lam, target if elastic else None)
            if a is None:
                if elastic:
                    return None
                break
            states, inputs, d, slack, b = a
            if elastic and slack <= cfg.slack_tol:
                fit = prog.phase_b(states, None)
                if fit is not None and fit[1] > 0:
                    elastic, best, stall = False, math.inf, 0
                else:
                    fit = prog.phase_b(states, target)
            else:
                fit = prog.phase_b(states, target if elastic else None)
        except NumericalFailure:
            if last is None:
                raise
            log.debug("LP failed numerically; keeping the last certificate")
            break
        if fit is None:
            break
        lam, d, slack = fit
        if not elastic:
            last = (states, inputs, b)
        obj = slack if elastic else -d
        # the elastic residual stalls when it improves by less than 0.1% per round
        tol = 1e-3 * best if elastic and math.isfinite(best) else cfg.stagnation_tol
        if best - obj < tol:
            stall += 1
            if stall >= cfg.stagnation_rounds:
                if not elastic:
                    break
                # residual stalled: ask for a smaller margin
                target *= cfg.target_shrink
                if target < cfg.d_min:
                    return None
                best, stall = math.inf, 0
                continue
        else:
            stall = 0
        best = min(best, obj)
    if last is None:
        return None
    states, inputs, b = last
    return _polish(prog, states[0], inputs, b)


def _workers(cfg: SolverConfig) -> int:
    if cfg.workers:
        return cfg.workers
    try:
        return max(1, int(os.environ.get("CIS_KIT_THREADS", "1")))
    except ValueError:
        return 1


def _search(sys, cs, N, cfg, x0=None, gain=None, initial=None) -> Optional[FeasibilityCertificate]:
    prog = _Program(sys, cs, N, x0=x0, gain=gain)

    def run(r):
        rng = np.random.default_rng([cfg.seed, N, r])
        try:
            structured = gain is not None or r < (cfg.restarts + 1) // 2
            return _alternate(prog, rng, cfg, initial if r == 0 else None, structured)
        except NumericalFailure as exc:
            log.warning("restart %d failed numerically: %s", r, exc)
            return None

    workers = _workers(cfg)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(cfg.restarts)))
    else:
        results = [run(r) for r in range(cfg.restarts)]
    best = None
    for r, cert in enumerate(results):
        if cert is None or cert.margin < cfg.d_min:
            continue
        if not verify_certificate(cert, sys, cs).passed:
            log.debug("restart %d produced a certificate that failed verification", r)
            continue
        if best is None or cert.margin > best.margin:
            best = cert
    return best


def _check_problem(sys: LinearSystem, cs: ConstraintSet, N: int) -> None:
    cs.check(sys)
    if N <= sys.n + 1:
        raise InvalidHorizon(f"horizon N={N} must exceed n+1={sys.n + 1}")
    cs.X.bounding_box()
    cs.U.bounding_box()


def solve_open_loop(sys: LinearSystem, cs: ConstraintSet, N: int,
                    cfg: SolverConfig = SolverConfig(), x0=None,
                    initial=None) -> Optional[FeasibilityCertificate]:
    """Search for an open-loop certificate of horizon N (None if none found).

    ``None`` is not a proof of infeasibility: the program is nonconvex and the
    search is local.  ``x0`` pins the initial state; ``initial`` (an (N+1, n)
    trajectory) replaces the random rollout of the first restart.
    """
    _check_problem(sys, cs, N)
    return _search(sys, cs, N, cfg, x0=x0, initial=initial)


def _pole_set(r: int, radius: float, spiral: bool) -> np.ndarray:
    """r stable poles that make the closed loop oscillate (complex pairs or negative reals)."""
    poles: List[complex] = []
    k = 0
    while len(poles) < r:
        if spiral and r - len(poles) >= 2:
            ang = math.pi * (0.3 + 0.4 * k / max(1, r))
            poles += [radius * complex(math.cos(ang), math.sin(ang)),
                      radius * complex(math.cos(ang), -math.sin(ang))]
        else:
            poles.append(-radius * (1.0 - 0.25 * k / max(1, r)))
        k += 1
    return np.array(poles)


def _place_controllable(sys: LinearSystem, poles: np.ndarray) -> Optional[np.ndarray]:
    """Gain K placing ``poles`` on the controllable subspace; other modes are left alone."""
    n = sys.n
    blocks = [sys.B]
    for _ in range(n - 1):
        blocks.append(sys.A @ blocks[-1])
    C = np.hstack(blocks)
    U, sv, _ = np.linalg.svd(C)
    r = int(np.sum(sv > 1e-9 * max(1.0, sv[0]))) if sv.size else 0
    if r == 0:
        return None
    T1 = U[:, :r]
    A11 = T1.T @ sys.A @ T1
    B1 = T1.T @ sys.B
    poles = poles[:r]
    try:
        if r == 1 and B1.shape[1] >= 1:
            # scalar subsystem: choose the input direction with the largest authority
            k = int(np.argmax(np.abs(B1[0])))
            K1 = np.zeros((sys.m, 1))
            K1[k, 0] = (poles[0].real - A11[0, 0]) / B1[0, k]
        else:
            K1 = -place_poles(A11, B1, poles).gain_matrix
    except (ValueError, np.linalg.LinAlgError):
        return None
    K = K1 @ T1.T
    got = np.sort_complex(np.linalg.eigvals(A11 + B1 @ K1))
    if not np.all(np.isfinite(K)) or np.max(np.abs(got - np.sort_complex(poles))) > 1e-6:
        return None
    return K


def _default_gains(sys: LinearSystem) -> List[np.ndarray]:
    n, m = sys.n, sys.m
    gains = [np.zeros((m, n))]
    try:
        P = solve_discrete_are(sys.A, sys.B, np.eye(n), np.eye(m))
        gains.append(-np.linalg.solve(np.eye(m) + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A))
    except (np.linalg.LinAlgError, ValueError):
        pass
    # oscillating closed loops keep the terminal state inside the trajectory hull
    for radius, spiral in ((0.8, True), (0.6, True), (0.8, False)):
        K = _place_controllable(sys, _pole_set(n, radius, spiral))
        if K is not None and not any(np.allclose(K, G) for G in gains):
            gains.append(K)
    return gains


def solve_closed_loop(sys: LinearSystem, cs: ConstraintSet, N: int,
                      cfg: SolverConfig = SolverConfig(), x0=None
                      ) -> Optional[Tuple[FeedbackLaw, FeasibilityCertificate]]:
    """Certificate whose inputs follow u_i = K x_i + b for one of the candidate gains."""
    _check_problem(sys, cs, N)
    gains = cfg.gains if cfg.gains is not None else _default_gains(sys)
    best = None
    for K in gains:
        K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(sys.m, sys.n)
        cert = _search(sys, cs, N, cfg, x0=x0, gain=K)
        if cert is not None and (best is None or cert.margin > best.margin):
            best = cert
    if best is None:
        return None
    return best.feedback, best


def evaluate_feedback(sys: LinearSystem, cs: ConstraintSet, x0, K, b, N: int
                      ) -> Optional[FeasibilityCertificate]:
    """Roll out u = K x + b from x0 and fit the largest margin (no optimisation of K, b, x0)."""
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(sys.m, sys.n)
    b = np.asarray(b, dtype=float).reshape(sys.m)
    prog = _Program(sys, cs, N, gain=K)
    return _polish(prog, x0, None, b)


def horizon_search(sys: LinearSystem, cs: ConstraintSet, N_max: int,
                   cfg: SolverConfig = SolverConfig(), N_min: Optional[int] = None,
                   closed_loop: bool = False, x0=None
                   ) -> Optional[FeasibilityCertificate]:
    """First horizon in N_min..N_max (N_min defaults to n+2) admitting a certificate."""
    N_min = sys.n + 2 if N_min is None else N_min
    for N in range(N_min, N_max + 1):
        if closed_loop:
            out = solve_closed_loop(sys, cs, N, cfg, x0=x0)
            cert = None if out is None else out[1]
        else:
            cert = solve_open_loop(sys, cs, N, cfg, x0=x0)
        if cert is not None:
            log.info("certificate found at N=%d (d=%.3g)", N, cert.margin)
            return cert
    return None


# --------------------------------------------------------------------------
# verification


@dataclass
class Check:
    name: str
    passed: bool
    residual: float


@dataclass
class VerificationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed, "residual": c.residual}
                           for c in self.checks]}


def verify_certificate(cert: FeasibilityCertificate, sys: LinearSystem, cs: ConstraintSet,
                       tol: float = 1e-8) -> VerificationReport:
    """Re-check every certificate condition from scratch; never raises on bad data."""
    rep = VerificationReport()
    add = rep.checks.append
    n, N = sys.n, cert.N
    shapes_ok = (cert.states.shape == (N + 1, n) and cert.inputs.shape == (N, sys.m)
                 and cert.weights.shape == (N, 2 * n))
    add(Check("shapes", shapes_ok, 0.0))
    if not shapes_ok:
        return rep
    add(Check("horizon", N > n + 1, float(N - (n + 1))))

    dyn = cert.states[1:] - (cert.states[:-1] @ sys.A.T + cert.inputs @ sys.B.T)
    r = float(np.max(np.abs(dyn), initial=0.0))
    add(Check("dynamics", r <= tol, r))

    r = float(np.max(cert.window @ cs.X.H.T - cs.X.q, initial=-np.inf))
    add(Check("states_in_X", r <= tol, r))
    r = float(np.max(cert.inputs @ cs.U.H.T - cs.U.q, initial=-np.inf))
    add(Check("inputs_in_U", r <= tol, r))
    if cert.feedback is not None:
        fb = cert.window @ cert.feedback.K.T + cert.feedback.b - cert.inputs
        r = float(np.max(np.abs(fb), initial=0.0))
        add(Check("feedback_law", r <= tol, r))

    lam = cert.weights
    r = float(max(np.max(-lam, initial=0.0), np.max(np.abs(lam.sum(axis=0) - 1.0))))
    add(Check("weights_convex", r <= 1e-9, r))
    S = probe_directions(n)
    probes = cert.terminal + cert.margin * S               # (2n, n)
    combos = lam.T @ cert.window                            # (2n, n)
    r = float(np.max(np.abs(probes - combos)))
    add(Check("hull_equations", r <= tol, r))
    add(Check("margin_positive", cert.margin > 0, cert.margin))

    # independent LPs: every probe point is in the hull, the terminal state in its interior
    worst = math.inf
    for p in probes:
        worst = min(worst, ri_membership(p, cert.window).margin)
    add(Check("probes_in_hull", worst >= 0, worst))
    ri = ri_membership(cert.terminal, cert.window).margin
    add(Check("terminal_in_relative_interior", ri > 0, ri))
    _, basis, _ = affine_hull(cert.window)
    add(Check("hull_full_dimensional", basis.shape[1] == n, float(basis.shape[1])))
    return rep


def program_residual(cert: FeasibilityCertificate, sys: LinearSystem, cs: ConstraintSet) -> float:
    """Largest violation when the certificate is substituted into the program constraints."""
    S = probe_directions(sys.n)
    parts = [
        np.abs(cert.states[1:] - cert.states[:-1] @ sys.A.T - cert.inputs @ sys.B.T).ravel(),
        np.maximum(cert.window @ cs.X.H.T - cs.X.q, 0).ravel(),
        np.maximum(cert.inputs @ cs.U.H.T - cs.U.q, 0).ravel(),
        np.abs(cert.terminal + cert.margin * S - cert.weights.T @ cert.window).ravel(),
        np.abs(cert.weights.sum(axis=0) - 1.0),
        np.maximum(-cert.weights, 0).ravel(),
        [max(-cert.margin, 0.0)],
    ]
    return float(max(np.max(p, initial=0.0) for p in parts))


# --------------------------------------------------------------------------
# consequences of a certificate


def build_invariant(cert: FeasibilityCertificate, sys: Optional[LinearSystem] = None,
                    cs: Optional[ConstraintSet] = None) -> VPolytope:
    """Hull of x_0 ... x_{N-1}, reduced to its extreme points."""
    if sys is not None and cs is not None:
        rep = verify_certificate(cert, sys, cs)
        if not rep.passed:
            failed = [c.name for c in rep.checks if not c.passed]
            raise InvalidCertificate(f"certificate fails: {', '.join(failed)}")
    if cert.margin <= 0:
        raise InvalidCertificate("certificate margin must be positive")
    _, basis, _ = affine_hull(cert.window)
    if basis.shape[1] < cert.n:
        raise InvalidCertificate("trajectory hull is not full-dimensional")
    return VPolytope(hull_vertices(cert.window))


@dataclass
class TrajectoryController:
    """Input lookup along the certified trajectory with a constant fallback."""

    states: np.ndarray
    inputs: np.ndarray
    fallback: np.ndarray
    tol: float = 1e-9

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dist = np.linalg.norm(self.states - x, axis=1)
        t = int(np.argmin(dist))
        if dist[t] <= self.tol:
            return self.inputs[t]
        return self.fallback

    def replay(self, sys: LinearSystem, x0, steps: int) -> np.ndarray:
        xs = [np.asarray(x0, dtype=float)]
        for _ in range(steps):
            xs.append(sys.step(xs[-1], self(xs[-1])))
        return np.array(xs)


def extract_controller(cert: FeasibilityCertificate, tol: float = 1e-9) -> TrajectoryController:
    W = cert.window
    for i in range(W.shape[0]):
        for j in range(i):
            if np.linalg.norm(W[i] - W[j]) <= tol:
                raise AmbiguousStates(f"states {j} and {i} coincide; lookup would be ambiguous")
    return TrajectoryController(W.copy(), cert.inputs.copy(), cert.inputs[0].copy(), tol)


def inputs_from_controller(controller, sys: LinearSystem, x0, N: int) -> np.ndarray:
    """Input sequence u(t) = kappa(x(t)) generated by running the controller."""
    xs = np.asarray(x0, dtype=float)
    out = []
    for _ in range(N):
        u = np.asarray(controller(xs), dtype=float)
        out.append(u)
        xs = sys.step(xs, u)
    return np.array(out)


def terminal_weights(cert: FeasibilityCertificate) -> np.ndarray:
    """Max-min convex weights of x_N over the window (all positive for a valid certificate)."""
    ri = ri_membership(cert.terminal, cert.window)
    if ri.margin <= 0:
        raise MarginCollapse("terminal state is not in the relative interior of the hull")
    return ri.weights


def propagation_weights(alpha: np.ndarray) -> np.ndarray:
    """Weights of the next state A x_N + B sum_i alpha_i u_i over the original window.

    alpha'_0 = alpha_{N-1} alpha_0,  alpha'_i = alpha_{i-1} + alpha_{N-1} alpha_i.
    """
    alpha = np.asarray(alpha, dtype=float)
    out = alpha[-1] * alpha
    out[1:] += alpha[:-1]
    return out


def propagate_certificate(cert: FeasibilityCertificate, sys: LinearSystem,
                          floor: float = 1e-12) -> FeasibilityCertificate:
    """Shift the window by one step using the convex input combination of the terminal weights."""
    if cert.margin <= floor:
        raise MarginCollapse(f"margin {cert.margin:.3g} is not strictly positive")
    alpha = terminal_weights(cert)
    u_next = alpha @ cert.inputs
    x_next = sys.step(cert.terminal, u_next)
    states = np.vstack([cert.states[1:], x_next])
    inputs = np.vstack([cert.inputs[1:], u_next])
    fit = fit_weights(states)
    if fit is None or fit[1] <= floor:
        raise MarginCollapse("propagated margin collapsed")
    lam, d = fit
    return FeasibilityCertificate(states, inputs, lam, d, cert.feedback)


def extend_certificate(cert: FeasibilityCertificate, sys: LinearSystem,
                       steps: int) -> FeasibilityCertificate:
    """Append ``steps`` states, each driven by the convex input combination of the terminal weights.

    Unlike propagation the start of the trajectory is kept, so the horizon grows.
    """
    for _ in range(steps):
        alpha = terminal_weights(cert)
        u_next = alpha @ cert.inputs
        states = np.vstack([cert.states, sys.step(cert.terminal, u_next)])
        inputs = np.vstack([cert.inputs, u_next])
        fit = fit_weights(states)
        if fit is None or fit[1] <= 0:
            raise MarginCollapse("extended margin collapsed")
        cert = FeasibilityCertificate(states, inputs, fit[0], fit[1], cert.feedback)
    return cert


@dataclass
class RefinementResult:
    certificate: FeasibilityCertificate
    inner: VPolytope            # hull of the trajectory after N propagations
    hull: VPolytope             # hull of the certificate window
    trace: FixedPointTrace
    propagated: FeasibilityCertificate


def refine_pipeline(sys: LinearSystem, cs: ConstraintSet, N: int,
                    cfg: SolverConfig = SolverConfig(),
                    cert: Optional[FeasibilityCertificate] = None, tol: float = 1e-6,
                    max_iter: int = 100) -> RefinementResult:
    """Certificate -> propagated inner hull -> inside-out backward iteration.

    Checks the nesting  inner ⊆ hull  and returns the fixed-point trace
    started from the certificate hull.
    """
    if cert is None:
        cert = solve_open_loop(sys, cs, N, cfg)
        if cert is None:
            raise InvalidCertificate(f"no certificate found at horizon {N}")
    hull = build_invariant(cert, sys, cs)
    prop = cert
    for _ in range(cert.N):
        prop = propagate_certificate(prop, sys)
    inner = VPolytope(hull_vertices(prop.window))
    H = convex_hull(hull.vertices)
    if not inclusion(inner, H, 1e-7):
        raise NumericalFailure("propagated hull escaped the certificate hull")
    trace = backward_fixed_point(sys, H, cs, TraceMode.INSIDE_OUT, tol, max_iter)
    return RefinementResult(cert, inner, hull, trace, prop)
