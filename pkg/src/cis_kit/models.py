"""Benchmark systems and the JSON model-file format."""
from __future__ import annotations

import copy
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, InvalidParameters, MissingMatrices
from .invariance import ConstraintSet, LinearSystem
from .mpc import HullInterior, MpcProblem, TerminalSet
from .polytope import HPolytope, polytope_from_json

__all__ = [
    "Discretization",
    "ModelFile",
    "expm",
    "discretize",
    "example1",
    "example1_model",
    "truck_trailer",
    "truck_trailer_continuous",
    "truck_trailer_model",
    "coupled_tanks",
    "coupled_tanks_model",
    "coupled_tanks_surrogate",
    "scalar_model",
    "load_model",
    "save_model",
    "builtin_model",
    "BUILTIN_MODELS",
]

SUBSTITUTED = "substituted"


class Discretization(enum.Enum):
    EULER = "euler"
    ZOH = "zoh"


def expm(M, tol: float = 1e-12) -> np.ndarray:
    """Matrix exponential by a truncated Taylor series with scaling and squaring."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    norm = np.linalg.norm(M, 1)
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / (2.0 ** s)
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 40):
        term = term @ X / k
        E = E + term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(E, 1):
            break
    for _ in range(s):
        E = E @ E
    return E


def discretize(Ac, Bc, Ts: float, method: Union[str, Discretization] = Discretization.ZOH
               ) -> LinearSystem:
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float).reshape(Ac.shape[0], -1)
    method = Discretization(method)
    n, m = Bc.shape
    if method is Discretization.EULER:
        return LinearSystem(np.eye(n) + Ts * Ac, Ts * Bc)
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm(aug * Ts)
    return LinearSystem(E[:n, :n], E[:n, n:])


# --------------------------------------------------------------------------
# uncontrollable 2D example


EXAMPLE1_A = np.array([[0.5, 1.0], [0.0, -0.5]])
EXAMPLE1_B = np.array([[1.0], [0.0]])
EXAMPLE1_SAFE_BOX = 5.0


def example1(safe_set: Optional[HPolytope] = None) -> Tuple[LinearSystem, ConstraintSet]:
    """Uncontrollable 2D example with u in [-1, 1]; default safe set is the box [-5, 5]^2."""
    if safe_set is None:
        safe_set = HPolytope.box([-EXAMPLE1_SAFE_BOX] * 2, [EXAMPLE1_SAFE_BOX] * 2)
    if safe_set.dim != 2:
        raise DimensionMismatch("safe set must be two-dimensional")
    safe_set.bounding_box()
    return LinearSystem(EXAMPLE1_A, EXAMPLE1_B), ConstraintSet(safe_set, HPolytope.box([-1.0], [1.0]))


# --------------------------------------------------------------------------
# truck with M trailers


def truck_trailer_continuous(M: int, ks: float = 1.0, kd: float = 1.0, mass: float = 1.0
                             ) -> Tuple[np.ndarray, np.ndarray]:
    """(A_c, B_c) in the state order d_1..d_M, v_0..v_M.

        d_i'  = v_{i-1} - v_i
        v_0'  = ks/m d_1 - kd/m v_0 + kd/m v_1 + u
        v_i'  = ks/m (d_i - d_{i+1}) + kd/m (v_{i-1} - 2 v_i + v_{i+1}),  0 < i < M
        v_M'  = ks/m d_M - kd/m v_M + kd/m v_{M-1}
    """
    if int(M) != M or M < 1:
        raise InvalidParameters("number of trailers must be a positive integer")
    if mass <= 0:
        raise InvalidParameters("mass must be positive")
    M = int(M)
    n = 2 * M + 1
    a, b = ks / mass, kd / mass

    def d(i):           # d_i, i = 1..M
        return i - 1

    def v(i):           # v_i, i = 0..M
        return M + i

    Ac = np.zeros((n, n))
    for i in range(1, M + 1):
        Ac[d(i), v(i - 1)] = 1.0
        Ac[d(i), v(i)] = -1.0
    Ac[v(0), d(1)] = a
    Ac[v(0), v(0)] = -b
    Ac[v(0), v(1)] = b
    for i in range(1, M):
        Ac[v(i), d(i)] = a
        Ac[v(i), d(i + 1)] = -a
        Ac[v(i), v(i - 1)] = b
        Ac[v(i), v(i)] = -2 * b
        Ac[v(i), v(i + 1)] = b
    Ac[v(M), d(M)] = a
    Ac[v(M), v(M)] = -b
    Ac[v(M), v(M - 1)] = b
    Bc = np.zeros((n, 1))
    Bc[v(0), 0] = 1.0
    return Ac, Bc


def truck_trailer(M: int, Ts: float = 0.1, ks: float = 1.0, kd: float = 1.0, mass: float = 1.0,
                  method: Union[str, Discretization] = Discretization.ZOH) -> LinearSystem:
    if Ts <= 0:
        raise InvalidParameters("sampling time must be positive")
    Ac, Bc = truck_trailer_continuous(M, ks, kd, mass)
    return discretize(Ac, Bc, Ts, method)


# substitute constraint bounds for the sweep (the original ones are not published with the system)
TRUCK_DEFAULTS = {"Ts": 1.0, "ks": 1.0, "kd": 1.0, "mass": 1.0,
                  "d_bound": 1.0, "v_bound": 2.0, "u_bound": 1.0}


def truck_trailer_model(M: int, **overrides) -> "ModelFile":
    cfg = dict(TRUCK_DEFAULTS)
    cfg.update(overrides)
    sys = truck_trailer(M, cfg["Ts"], cfg["ks"], cfg["kd"], cfg["mass"])
    ub = np.array([cfg["d_bound"]] * M + [cfg["v_bound"]] * (M + 1))
    X = HPolytope.box(-ub, ub)
    U = HPolytope.box([-cfg["u_bound"]], [cfg["u_bound"]])
    return ModelFile(f"truck_trailer_M{M}", sys, ConstraintSet(X, U), None,
                     {"status": SUBSTITUTED,
                      "note": "ks, kd, mass, Ts and the state/input bounds are documented "
                              "substitutes, not the values of the original benchmark",
                      "parameters": cfg})


# --------------------------------------------------------------------------
# coupled tanks


TANKS_U_BOUND = np.array([4.53e-4, 5.56e-4])
TANKS_X_UB = np.array([0.71, 0.7, 0.65, 0.64])
TANKS_X_LB = np.array([-0.45, -0.46, -0.45, -0.46])
TANKS_Q = np.diag([1.5, 3.8, 10.1, 27.3])
TANKS_R = np.eye(2)
TANKS_X0 = np.array([0.5, 0.5, 0.5, 0.5])
TANKS_XREF = np.array([0.3, 0.21, 0.39, 0.1])
TANKS_N = 40

# four-tank process linearised around an operating point; tanks 3, 4 drain into 1, 2
SURROGATE_TANKS = {"area": [0.06, 0.06, 0.06, 0.06], "time_constants": [60.0, 70.0, 50.0, 55.0],
                   "gamma": [0.3, 0.4], "Ts": 5.0}


def coupled_tanks_surrogate(params: Optional[dict] = None) -> LinearSystem:
    """Linearised four-tank process with pumps feeding level deviations (m) by flows (m^3/s).

    x = (h_1, h_2, h_3, h_4) with the upper tanks 3, 4 draining into the lower tanks 1, 2;
    pump j splits its flow gamma_j / (1 - gamma_j) between a lower and an upper tank.
    """
    p = dict(SURROGATE_TANKS)
    p.update(params or {})
    a = np.asarray(p["area"], dtype=float)
    T = np.asarray(p["time_constants"], dtype=float)
    g1, g2 = p["gamma"]
    Ac = np.diag(-1.0 / T)
    Ac[0, 2] = a[2] / (a[0] * T[2])
    Ac[1, 3] = a[3] / (a[1] * T[3])
    Bc = np.array([[g1 / a[0], 0.0],
                   [0.0, g2 / a[1]],
                   [0.0, (1 - g2) / a[2]],
                   [(1 - g1) / a[3], 0.0]])
    return discretize(Ac, Bc, p["Ts"], Discretization.ZOH)


def coupled_tanks_model(A=None, B=None) -> "ModelFile":
    """Tank benchmark model file; without A, B the surrogate dynamics are used."""
    if A is None or B is None:
        sys = coupled_tanks_surrogate()
        prov = {"status": SUBSTITUTED,
                "note": "A, B come from a linearised four-tank surrogate "
                        f"({json.dumps(SURROGATE_TANKS)}); bounds, weights, x0, x_ref and N are "
                        "the benchmark values"}
    else:
        sys = LinearSystem(A, B)
        prov = {"status": "user", "note": "A, B supplied by the user"}
    cs = ConstraintSet(HPolytope.box(TANKS_X_LB, TANKS_X_UB),
                       HPolytope.box(-TANKS_U_BOUND, TANKS_U_BOUND))
    mpc = {"Q": TANKS_Q.tolist(), "R": TANKS_R.tolist(), "x_ref": TANKS_XREF.tolist(),
           "N": TANKS_N, "x0": TANKS_X0.tolist(), "terminal": "hull"}
    return ModelFile("coupled_tanks", sys, cs, mpc, prov)


def coupled_tanks(file: Union[str, Path, dict, "ModelFile"]) -> MpcProblem:
    """MPC problem for the tank benchmark; the file must supply A and B.

    Bounds, weights, x0, x_ref and N default to the benchmark values and can be
    overridden by the file's own X, U and mpc block.
    """
    if isinstance(file, ModelFile):
        data = file.to_json()
    elif isinstance(file, dict):
        data = file
    else:
        data = json.loads(Path(file).read_text())
    if "A" not in data or "B" not in data:
        raise MissingMatrices("the coupled-tanks model file must provide A and B")
    base = coupled_tanks_model(data["A"], data["B"]).to_json()
    base.update({k: v for k, v in data.items() if k in ("X", "U", "name", "provenance")})
    base["mpc"] = {**base["mpc"], **(data.get("mpc") or {})}
    return ModelFile.from_json(base).mpc_problem()


# --------------------------------------------------------------------------
# model files


@dataclass(eq=False)
class ModelFile:
    name: str
    sys: LinearSystem
    cs: ConstraintSet
    mpc: Optional[dict] = None
    provenance: Optional[Union[str, dict]] = None

    def to_json(self) -> dict:
        out = {"name": self.name, "A": self.sys.A.tolist(), "B": self.sys.B.tolist(),
               "X": self.cs.X.to_json(), "U": self.cs.U.to_json()}
        if self.mpc is not None:
            out["mpc"] = copy.deepcopy(self.mpc)
        if self.provenance is not None:
            out["provenance"] = copy.deepcopy(self.provenance)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ModelFile":
        if "A" not in data or "B" not in data:
            raise MissingMatrices("model file must provide A and B")
        A = np.asarray(data["A"], dtype=float)
        B = np.asarray(data["B"], dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        sys = LinearSystem(A, B)
        if "X" not in data or "U" not in data:
            raise InvalidParameters("model file must provide X and U")
        cs = ConstraintSet(_as_h(polytope_from_json(data["X"])), _as_h(polytope_from_json(data["U"])))
        cs.check(sys)
        return cls(str(data.get("name", "model")), sys, cs, data.get("mpc"), data.get("provenance"))

    def mpc_problem(self, terminal: Optional[Union[TerminalSet, HullInterior]] = None) -> MpcProblem:
        if self.mpc is None:
            raise InvalidParameters(f"model {self.name!r} has no mpc block")
        cfg = self.mpc
        n, m = self.sys.n, self.sys.m
        if terminal is None:
            spec = cfg.get("terminal", "hull")
            if spec == "hull":
                terminal = HullInterior()
            else:
                terminal = TerminalSet(_as_h(polytope_from_json(spec)))
        return MpcProblem(self.sys, self.cs,
                          np.asarray(cfg.get("Q", np.eye(n)), dtype=float),
                          np.asarray(cfg.get("R", np.eye(m)), dtype=float),
                          np.asarray(cfg.get("x_ref", np.zeros(n)), dtype=float),
                          int(cfg.get("N", 10)), terminal)

    @property
    def x0(self) -> Optional[np.ndarray]:
        if self.mpc is None or "x0" not in self.mpc:
            return None
        return np.asarray(self.mpc["x0"], dtype=float)


def _as_h(P) -> HPolytope:
    return P if isinstance(P, HPolytope) else P.to_hrep()


def load_model(path: Union[str, Path]) -> ModelFile:
    return ModelFile.from_json(json.loads(Path(path).read_text()))


def save_model(model: ModelFile, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=1) + "\n")


def example1_model(safe_set: Optional[HPolytope] = None) -> ModelFile:
    sys, cs = example1(safe_set)
    prov = None if safe_set is not None else {
        "status": SUBSTITUTED, "note": "safe set [-5, 5]^2 is a documented substitute"}
    mpc = {"Q": np.eye(2).tolist(), "R": [[1.0]], "x_ref": [0.0, 0.0], "N": 7,
           "x0": [1.0, 1.0], "terminal": "hull"}
    return ModelFile("example1", sys, cs, mpc, prov)


def scalar_model() -> ModelFile:
    """x+ = -0.5 x + u on X = [-2, 2], U = [-1, 1]."""
    sys = LinearSystem([[-0.5]], [[1.0]])
    cs = ConstraintSet(HPolytope.box([-2.0], [2.0]), HPolytope.box([-1.0], [1.0]))
    mpc = {"Q": [[1.0]], "R": [[1.0]], "x_ref": [0.0], "N": 3, "x0": [1.0], "terminal": "hull"}
    return ModelFile("scalar", sys, cs, mpc, None)


BUILTIN_MODELS = {
    "example1": example1_model,
    "scalar": scalar_model,
    "coupled_tanks": coupled_tanks_model,
    **{f"truck_trailer_M{M}": (lambda M=M: truck_trailer_model(M)) for M in range(1, 5)},
}


def builtin_model(name: str) -> ModelFile:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise InvalidParameters(f"unknown model {name!r}") from None
