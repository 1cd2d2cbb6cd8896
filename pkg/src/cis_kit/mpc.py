"""Finite-horizon MPC with a terminal set or a trajectory-hull terminal constraint.

Both variants are condensed into a QP over the input sequence.  The hull
variant requires x_N to be a strictly positive convex combination of the
preceding predicted states.  That constraint is bilinear, so it is handled
with fixed weights: for fixed lambda it is linear in the inputs.  Recursive
feasibility comes from the shifted candidate, which is always admissible
when the previous step was.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .errors import (DimensionMismatch, InitialInfeasible, InvalidParameters, MarginCollapse,
                     MissingWeights)
from .feasibility import (FeasibilityCertificate, SolverConfig, extend_certificate,
                          solve_open_loop)
from .invariance import ConstraintSet, LinearSystem
from .lp import LpProblem, solve_lp
from .polytope import HPolytope, h_inclusion, ri_membership
from .qp import solve_qp

log = logging.getLogger(__name__)

__all__ = [
    "TerminalSet",
    "HullInterior",
    "MpcProblem",
    "MpcSolution",
    "StepRecord",
    "ClosedLoopLog",
    "solve_terminal_set_mpc",
    "solve_hull_mpc",
    "solve_mpc",
    "shift_candidate",
    "check_hull_solution",
    "trajectory_cost",
    "simulate",
]

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class TerminalSet:
    X_f: HPolytope


@dataclass(frozen=True)
class HullInterior:
    pass


@dataclass(eq=False)
class MpcProblem:
    sys: LinearSystem
    cs: ConstraintSet
    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray           # (n,) constant or (T, n) time-indexed
    N: int
    terminal: Union[TerminalSet, HullInterior] = field(default_factory=HullInterior)
    P: Optional[np.ndarray] = None          # terminal weight, defaults to Q
    improve_rounds: int = 5
    cold_config: SolverConfig = SolverConfig(restarts=4)

    def __post_init__(self):
        n, m = self.sys.n, self.sys.m
        self.cs.check(self.sys)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.P = self.Q.copy() if self.P is None else np.atleast_2d(np.asarray(self.P, dtype=float))
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        if self.Q.shape != (n, n) or self.P.shape != (n, n) or self.R.shape != (m, m):
            raise DimensionMismatch("cost matrices do not match the system dimensions")
        if self.x_ref.shape[-1] != n or self.x_ref.ndim not in (1, 2):
            raise DimensionMismatch("reference must be an n-vector or a (T, n) array")
        for name, M, strict in (("Q", self.Q, False), ("P", self.P, False), ("R", self.R, True)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise InvalidParameters(f"{name} must be symmetric")
            ev = np.linalg.eigvalsh(M)
            if (strict and ev.min() <= 0) or ev.min() < -1e-12:
                raise InvalidParameters(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
        if self.N < 1:
            raise InvalidParameters("horizon must be positive")
        if isinstance(self.terminal, TerminalSet):
            X_f = self.terminal.X_f
            if X_f.dim != n:
                raise DimensionMismatch("terminal set dimension differs from the state dimension")
            if not X_f.is_empty() and not h_inclusion(X_f, self.cs.X, 1e-9):
                raise InvalidParameters("terminal set must be contained in X")

    @property
    def hull_mode(self) -> bool:
        return isinstance(self.terminal, HullInterior)

    def reference(self, t: int) -> np.ndarray:
        """Reference rows r_t ... r_{t+N}; time-indexed references hold their last value."""
        if self.x_ref.ndim == 1:
            return np.tile(self.x_ref, (self.N + 1, 1))
        idx = np.minimum(np.arange(t, t + self.N + 1), self.x_ref.shape[0] - 1)
        return self.x_ref[idx]

    def stage_cost(self, x, u, t: int) -> float:
        e = np.asarray(x, dtype=float) - self.reference(t)[0]
        u = np.asarray(u, dtype=float)
        return float(e @ self.Q @ e + u @ self.R @ u)


@dataclass
class MpcSolution:
    inputs: np.ndarray          # (N, m)
    states: np.ndarray          # (N+1, n)
    cost: float
    feasible: bool = True
    terminal_weights: Optional[np.ndarray] = None
    t: int = 0
    source: str = ""


def trajectory_cost(p: MpcProblem, states: np.ndarray, inputs: np.ndarray, t: int = 0) -> float:
    """sum_{k<N} (x_k-r_k)'Q(x_k-r_k) + u_k'R u_k  +  (x_N-r_N)'P(x_N-r_N)."""
    r = p.reference(t)
    e = states - r
    stage = np.einsum("ki,ij,kj->", e[:-1], p.Q, e[:-1]) + np.einsum("ki,ij,kj->", inputs, p.R, inputs)
    return float(stage + e[-1] @ p.P @ e[-1])


class _Condensed:
    """x_k = Phi_k x_t + Gamma_k u for the stacked input vector u."""

    def __init__(self, p: MpcProblem):
        A, B, N = p.sys.A, p.sys.B, p.N
        n, m = p.sys.n, p.sys.m
        self.n, self.m, self.N = n, m, N
        Phi = [np.eye(n)]
        for _ in range(N):
            Phi.append(A @ Phi[-1])
        G = np.zeros((N + 1, n, N * m))
        for k in range(1, N + 1):
            G[k] = A @ G[k - 1]
            G[k][:, (k - 1) * m:k * m] = B
        self.Phi = np.array(Phi)              # (N+1, n, n)
        self.G = G                            # (N+1, n, N m)
        Qbar = [p.Q] * N + [p.P]
        self.H = 2 * sum(G[k].T @ Qbar[k] @ G[k] for k in range(N + 1))
        self.H += 2 * np.kron(np.eye(N), p.R)
        self.Qbar = Qbar
        X, U = p.cs.X, p.cs.U
        rows = [X.H @ G[k] for k in range(1, N)] + [np.kron(np.eye(N), U.H)]
        self.A_ub = np.vstack(rows) if rows else np.zeros((0, N * m))
        self._X = X
        self._U_q = np.tile(U.q, N)

    def linear_term(self, x_t, ref) -> np.ndarray:
        return 2 * sum(self.G[k].T @ self.Qbar[k] @ (self.Phi[k] @ x_t - ref[k])
                       for k in range(self.N + 1))

    def b_ub(self, x_t) -> np.ndarray:
        X = self._X
        parts = [X.q - X.H @ (self.Phi[k] @ x_t) for k in range(1, self.N)] + [self._U_q]
        return np.concatenate(parts)

    def states(self, x_t, u) -> np.ndarray:
        return np.einsum("kij,j->ki", self.Phi, x_t) + np.einsum("kij,j->ki", self.G, u)

    def hull_equality(self, x_t, lam):
        """(Gamma_N - sum lam_i Gamma_i) u = (sum lam_i Phi_i - Phi_N) x_t."""
        N = self.N
        Aeq = self.G[N] - np.einsum("k,kij->ij", lam, self.G[:N])
        beq = (np.einsum("k,kij->ij", lam, self.Phi[:N]) - self.Phi[N]) @ x_t
        return Aeq, beq


def _condensed(p: MpcProblem) -> _Condensed:
    c = p.__dict__.get("_condensed")
    if c is None:
        c = _Condensed(p)
        p.__dict__["_condensed"] = c
    return c


def _in_X(p: MpcProblem, x) -> bool:
    return p.cs.X.contains(x, 1e-9)


def solve_terminal_set_mpc(p: MpcProblem, x_t, t: int = 0) -> Optional[MpcSolution]:
    """Standard MPC with x_N in X_f; None when no admissible input sequence exists."""
    if not isinstance(p.terminal, TerminalSet):
        raise InvalidParameters("problem does not carry a terminal set")
    x_t = np.asarray(x_t, dtype=float)
    X_f = p.terminal.X_f
    if not _in_X(p, x_t) or X_f.is_empty():
        return None
    c = _condensed(p)
    A_ub = np.vstack([c.A_ub, X_f.H @ c.G[p.N]])
    b_ub = np.concatenate([c.b_ub(x_t), X_f.q - X_f.H @ (c.Phi[p.N] @ x_t)])
    # an LP decides feasibility so infeasibility is never confused with a QP failure
    lp = solve_lp(LpProblem.build(np.zeros(A_ub.shape[1]), A_ub, b_ub))
    if not lp.optimal:
        return None
    res = solve_qp(c.H, c.linear_term(x_t, p.reference(t)), A_ub, b_ub)
    if not res.optimal:
        return None
    u = res.x
    states = c.states(x_t, u)
    inputs = u.reshape(p.N, p.sys.m)
    return MpcSolution(inputs, states, trajectory_cost(p, states, inputs, t), True, None, t, "qp")


def _terminal_weights(states: np.ndarray) -> Optional[np.ndarray]:
    """Max-min convex weights of x_N over x_0..x_{N-1} if they clear the floor."""
    ri = ri_membership(states[-1], states[:-1])
    if ri.margin < LAMBDA_FLOOR:
        return None
    # minimum-norm correction so that the weights reproduce x_N to round-off
    M = np.vstack([states[:-1].T, np.ones(states.shape[0] - 1)])
    b = np.append(states[-1], 1.0)
    lam = ri.weights + np.linalg.lstsq(M, b - M @ ri.weights, rcond=None)[0]
    if lam.min() < LAMBDA_FLOOR:
        return ri.weights
    return lam


def _fixed_weight_qp(p: MpcProblem, x_t, t, lam, u_start) -> Optional[MpcSolution]:
    c = _condensed(p)
    Aeq, beq = c.hull_equality(x_t, lam)
    res = solve_qp(c.H, c.linear_term(x_t, p.reference(t)), c.A_ub, c.b_ub(x_t), Aeq, beq,
                   x_feasible=u_start)
    if not res.optimal:
        return None
    u = res.x
    states = c.states(x_t, u)
    inputs = u.reshape(p.N, p.sys.m)
    return MpcSolution(inputs, states, trajectory_cost(p, states, inputs, t), True, lam, t, "qp")


def _improve(p: MpcProblem, x_t, t, incumbent: MpcSolution) -> MpcSolution:
    best = incumbent
    lam = incumbent.terminal_weights
    for _ in range(p.improve_rounds):
        cand = _fixed_weight_qp(p, x_t, t, lam, best.inputs.ravel())
        if cand is None:
            break
        w = _terminal_weights(cand.states)
        if w is None or not check_hull_solution(p, x_t, cand, fresh=False):
            break
        cand.terminal_weights = w
        gain = best.cost - cand.cost
        if gain < 0:
            break
        cand.source = incumbent.source + "+qp"
        best = cand
        lam = w
        if gain <= 1e-9 * max(1.0, abs(best.cost)):
            break
    return best


def _cold_start(p: MpcProblem, x_t, t) -> Optional[MpcSolution]:
    sys, cs, N = p.sys, p.cs, p.N
    c = _condensed(p)
    seed_traj = None
    res = solve_qp(c.H, c.linear_term(x_t, p.reference(t)), c.A_ub, c.b_ub(x_t))
    if res.optimal:
        states = c.states(x_t, res.x)
        inputs = res.x.reshape(N, sys.m)
        w = _terminal_weights(states)
        if w is not None:
            return MpcSolution(inputs, states, trajectory_cost(p, states, inputs, t), True, w, t,
                               "unconstrained")
        seed_traj = states
    cert = None
    if N > sys.n + 1:
        cert = solve_open_loop(sys, cs, N, p.cold_config, x0=x_t, initial=seed_traj)
        # shorter horizons, extended forward with convex input combinations
        for N_short in range(sys.n + 2, N):
            if cert is not None:
                break
            short = solve_open_loop(sys, cs, N_short, p.cold_config, x0=x_t)
            if short is not None:
                try:
                    cert = extend_certificate(short, sys, N - N_short)
                except MarginCollapse:
                    cert = None
    if cert is None:
        return None
    w = _terminal_weights(cert.states)
    if w is None:
        return None
    return MpcSolution(cert.inputs, cert.states, trajectory_cost(p, cert.states, cert.inputs, t),
                       True, w, t, "certificate")


def shift_candidate(prev: MpcSolution, sys: LinearSystem) -> MpcSolution:
    """Drop the first input and append sum_i lambda_i u_i; the terminal weights carry over."""
    lam = prev.terminal_weights
    if lam is None:
        raise MissingWeights("previous solution carries no terminal weights")
    lam = np.asarray(lam, dtype=float)
    if lam.min() <= 0:
        raise MissingWeights("terminal weights must be strictly positive")
    u_last = lam @ prev.inputs
    inputs = np.vstack([prev.inputs[1:], u_last])
    states = np.vstack([prev.states[1:], sys.step(prev.states[-1], u_last)])
    return MpcSolution(inputs, states, float("nan"), True, lam.copy(), prev.t + 1, "shift")


def check_hull_solution(p: MpcProblem, x_t, sol: MpcSolution, tol: float = 1e-8,
                        fresh: bool = True) -> bool:
    """Re-check every hull-MPC constraint for ``sol``.

    With ``fresh`` the relative-interior condition is decided by a new LP
    rather than trusting the stored weights.
    """
    sys, cs = p.sys, p.cs
    x = sol.states
    if x.shape != (p.N + 1, sys.n) or sol.inputs.shape != (p.N, sys.m):
        return False
    if np.max(np.abs(x[0] - x_t)) > tol:
        return False
    if np.max(np.abs(x[1:] - x[:-1] @ sys.A.T - sol.inputs @ sys.B.T)) > tol:
        return False
    if np.max(x[:-1] @ cs.X.H.T - cs.X.q) > tol:
        return False
    if np.max(sol.inputs @ cs.U.H.T - cs.U.q) > tol:
        return False
    lam = sol.terminal_weights
    if lam is not None:
        if lam.min() < LAMBDA_FLOOR * 0.5 or abs(lam.sum() - 1) > 1e-9:
            return False
        if np.max(np.abs(lam @ x[:-1] - x[-1])) > tol:
            return False
    if fresh or lam is None:
        if ri_membership(x[-1], x[:-1]).margin <= 0:
            return False
    return True


def solve_hull_mpc(p: MpcProblem, x_t, warm: Optional[MpcSolution] = None,
                   t: Optional[int] = None) -> Optional[MpcSolution]:
    """Hull-terminal MPC: incumbent from the shifted warm start (or a cold search), then QP polish."""
    if not p.hull_mode:
        raise InvalidParameters("problem does not use the hull terminal constraint")
    x_t = np.asarray(x_t, dtype=float)
    t = (warm.t + 1 if warm is not None else 0) if t is None else t
    if not _in_X(p, x_t):
        return None
    incumbent = None
    if warm is not None:
        cand = shift_candidate(warm, p.sys)
        if np.max(np.abs(cand.states[0] - x_t)) <= 1e-9 and check_hull_solution(p, x_t, cand, fresh=False):
            cand.cost = trajectory_cost(p, cand.states, cand.inputs, t)
            cand.t = t
            incumbent = cand
        else:
            log.warning("shifted candidate rejected at t=%d; falling back to a cold start", t)
    if incumbent is None:
        incumbent = _cold_start(p, x_t, t)
        if incumbent is None:
            return None
    return _improve(p, x_t, t, incumbent)


def solve_mpc(p: MpcProblem, x_t, warm: Optional[MpcSolution] = None,
              t: int = 0) -> Optional[MpcSolution]:
    if p.hull_mode:
        return solve_hull_mpc(p, x_t, warm, t)
    return solve_terminal_set_mpc(p, x_t, t)


@dataclass
class StepRecord:
    t: int
    state: np.ndarray
    input: Optional[np.ndarray]
    stage_cost: float
    feasible: bool
    solve_time: float = 0.0
    source: str = ""
    candidate_ok: Optional[bool] = None


@dataclass
class ClosedLoopLog:
    records: List[StepRecord] = field(default_factory=list)
    # predicted solutions per step, kept only on request (not serialised)
    solutions: List["MpcSolution"] = field(default_factory=list)

    @property
    def cumulative_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records if r.feasible))

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.records)

    @property
    def states(self) -> np.ndarray:
        return np.array([r.state for r in self.records])

    @property
    def inputs(self) -> np.ndarray:
        return np.array([r.input for r in self.records if r.input is not None])

    def to_json(self) -> dict:
        return {
            "cumulative_cost": self.cumulative_cost,
            "all_feasible": self.all_feasible,
            "records": [{
                "t": r.t, "state": r.state.tolist(),
                "input": None if r.input is None else r.input.tolist(),
                "stage_cost": r.stage_cost, "feasible": r.feasible, "source": r.source,
                "candidate_ok": r.candidate_ok,
            } for r in self.records],
        }

    def to_csv(self) -> str:
        n = self.records[0].state.size if self.records else 0
        m = next((r.input.size for r in self.records if r.input is not None), 0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
                   + ["stage_cost", "feasible"])
        for r in self.records:
            u = [repr(float(v)) for v in r.input] if r.input is not None else [""] * m
            w.writerow([r.t] + [repr(float(v)) for v in r.state] + u
                       + [repr(r.stage_cost), int(r.feasible)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ClosedLoopLog":
        rows = list(csv.reader(io.StringIO(text)))
        head = rows[0]
        xi = [i for i, h in enumerate(head) if h.startswith("x")]
        ui = [i for i, h in enumerate(head) if h.startswith("u")]
        recs = []
        for row in rows[1:]:
            u = None if ui and row[ui[0]] == "" else np.array([float(row[i]) for i in ui])
            recs.append(StepRecord(int(row[0]), np.array([float(row[i]) for i in xi]), u,
                                   float(row[head.index("stage_cost")]),
                                   bool(int(row[head.index("feasible")]))))
        return cls(recs)


def simulate(p: MpcProblem, x0, steps: int, check_candidates: bool = True,
             keep_solutions: bool = False) -> ClosedLoopLog:
    """Receding-horizon loop on the nominal plant; each solve is warm-started by the shift.

    Stops at the first infeasible step (recorded with feasible=False).
    """
    x = np.asarray(x0, dtype=float)
    out = ClosedLoopLog()
    warm = None
    for t in range(steps):
        t0 = time.perf_counter()
        cand_ok = None
        if p.hull_mode and warm is not None and check_candidates:
            cand = shift_candidate(warm, p.sys)
            cand_ok = check_hull_solution(p, x, cand, fresh=True)
        sol = solve_mpc(p, x, warm, t)
        dt = time.perf_counter() - t0
        if sol is None:
            if t == 0:
                raise InitialInfeasible("no admissible input sequence from the initial state")
            out.records.append(StepRecord(t, x.copy(), None, 0.0, False, dt, "", cand_ok))
            return out
        if keep_solutions:
            out.solutions.append(sol)
        u = sol.inputs[0]
        out.records.append(StepRecord(t, x.copy(), u.copy(), p.stage_cost(x, u, t), True, dt,
                                      sol.source, cand_ok))
        x = p.sys.step(x, u)
        warm = sol if p.hull_mode else None
    out.records.append(StepRecord(steps, x.copy(), None, 0.0, True, 0.0, "final", None))
    return out


def log_to_json(log_: ClosedLoopLog) -> str:
    return json.dumps(log_.to_json(), indent=1)
