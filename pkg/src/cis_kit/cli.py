"""Command-line front end: ``cis-kit <command> ...``.

Exit codes: 0 success, 1 error (bad input, solver failure), 2 negative
result (no certificate, failed check, infeasible MPC step), 3 backward
iteration hit its iteration limit.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import CisError, InitialInfeasible, InvalidHorizon, SeedNotInvariant
from .feasibility import (FeasibilityCertificate, SolverConfig, build_invariant, horizon_search,
                          solve_open_loop, verify_certificate)
from .invariance import FixedPointTrace, TraceMode, backward_fixed_point, is_controlled_invariant
from .models import ModelFile, builtin_model, load_model, truck_trailer_model, TRUCK_DEFAULTS
from .mpc import ClosedLoopLog, HullInterior, TerminalSet, simulate
from .plotting import plot_sets, plot_time_series
from .polytope import HPolytope, VPolytope, polytope_from_json, vertex_enumeration, volume

log = logging.getLogger("cis_kit")

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE, EXIT_MAX_ITER = 0, 1, 2, 3


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    timings: dict = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    environment: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__})

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest-{self.command}.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


class _Run:
    """Collects outputs and timings for one command and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.out = Path(args.out).parent if command == "plot" else Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        config = {k: v for k, v in vars(args).items() if k not in ("func",)}
        self.manifest = RunManifest(command, config, args.seed)
        self.t0 = time.perf_counter()

    def write_json(self, name: str, data) -> Path:
        path = self.out / name
        path.write_text(json.dumps(data, indent=1) + "\n")
        self.manifest.outputs.append(str(path))
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.manifest.outputs.append(str(path))
        return path

    def finish(self, code: int) -> int:
        self.manifest.timings["total_s"] = round(time.perf_counter() - self.t0, 6)
        self.manifest.timings["exit_code"] = code
        self.manifest.write(self.out)
        return code


def _load_model(ref: str) -> ModelFile:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return load_model(path)
    return builtin_model(ref)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(restarts=args.restarts, seed=args.seed, max_rounds=args.max_rounds)


def _parse_horizon(text: str):
    if ":" in text:
        a, b = text.split(":", 1)
        return int(a), int(b)
    n = int(text)
    return n, n


def _read_json(path: str):
    return json.loads(Path(path).read_text())


def cmd_feas(args) -> int:
    run = _Run("feas", args)
    model = _load_model(args.model)
    lo, hi = _parse_horizon(args.horizon)
    n = model.sys.n
    if lo <= n + 1:
        raise InvalidHorizon(f"horizon {lo} must exceed n+1 = {n + 1}")
    cfg = _solver_config(args)
    t0 = time.perf_counter()
    if args.closed_loop:
        cert = horizon_search(model.sys, model.cs, hi, cfg, N_min=lo, closed_loop=True)
    elif lo == hi:
        cert = solve_open_loop(model.sys, model.cs, lo, cfg)
    else:
        cert = horizon_search(model.sys, model.cs, hi, cfg, N_min=lo)
    run.manifest.timings["search_s"] = round(time.perf_counter() - t0, 6)
    if cert is None:
        print(f"no certificate found for N in {lo}..{hi}", file=sys.stderr)
        return run.finish(EXIT_NEGATIVE)
    run.write_json("certificate.json", cert.to_json())
    if cert.feedback is not None:
        run.write_json("feedback.json", {"K": cert.feedback.K.tolist(), "b": cert.feedback.b.tolist()})
    report = verify_certificate(cert, model.sys, model.cs)
    run.write_json("verification.json", report.to_json())
    print(f"certificate N={cert.N} d={cert.margin:.6g} verified={report.passed}")
    return run.finish(EXIT_OK if report.passed else EXIT_NEGATIVE)


def cmd_invariant(args) -> int:
    run = _Run("invariant", args)
    model = _load_model(args.model)
    try:
        cert = FeasibilityCertificate.from_json(_read_json(args.cert))
    except json.JSONDecodeError as exc:
        raise CisError(f"cannot parse certificate: {exc}") from exc
    report = verify_certificate(cert, model.sys, model.cs)
    out = {"verification": report.to_json()}
    code = EXIT_NEGATIVE
    if report.passed:
        hull = build_invariant(cert)
        ok = is_controlled_invariant(model.sys, hull, model.cs)
        out["controlled_invariant"] = ok
        run.write_json("invariant.json", hull.to_json())
        code = EXIT_OK if ok else EXIT_NEGATIVE
    run.write_json("invariant-report.json", out)
    print("invariant" if code == EXIT_OK else "certificate rejected", file=sys.stderr if code else sys.stdout)
    return run.finish(code)


def _load_set(ref: str, model: ModelFile) -> HPolytope:
    if ref == "X":
        return model.cs.X
    data = _read_json(ref)
    if "states" in data:
        P = build_invariant(FeasibilityCertificate.from_json(data))
    else:
        P = polytope_from_json(data)
    return P if isinstance(P, HPolytope) else P.to_hrep()


def cmd_backward(args) -> int:
    run = _Run("backward", args)
    model = _load_model(args.model)
    seed_set = _load_set(args.seed_set, model)
    trace = backward_fixed_point(model.sys, seed_set, model.cs, TraceMode(args.mode), args.tol,
                                 args.max_iter)
    run.write_json("trace.json", trace.to_json())
    print(f"{'converged' if trace.converged else 'not converged'} after {trace.iterations} "
          f"iterations ({trace.final.num_rows} rows)")
    return run.finish(EXIT_OK if trace.converged else EXIT_MAX_ITER)


def cmd_mpc(args) -> int:
    run = _Run("mpc", args)
    model = _load_model(args.model)
    if args.terminal == "hull":
        terminal = HullInterior()
    elif args.terminal.startswith("set:"):
        terminal = TerminalSet(_load_set(args.terminal[4:], model))
    else:
        raise CisError(f"unknown terminal specification {args.terminal!r}")
    problem = model.mpc_problem(terminal)
    x0 = np.array([float(v) for v in args.x0.split(",")]) if args.x0 else model.x0
    if x0 is None:
        raise CisError("no initial state: pass --x0 or add x0 to the mpc block")
    try:
        result = simulate(problem, x0, args.steps)
    except InitialInfeasible as exc:
        print(f"infeasible at step 0: {exc}", file=sys.stderr)
        return run.finish(EXIT_NEGATIVE)
    run.write_text("log.csv", result.to_csv())
    run.write_json("log.json", result.to_json())
    inside = bool(np.all(result.states @ model.cs.X.H.T <= model.cs.X.q + 1e-9))
    print(f"steps={len(result.records) - 1} all_feasible={result.all_feasible} "
          f"states_within_X={inside} cost={result.cumulative_cost:.6g}")
    return run.finish(EXIT_OK if result.all_feasible and inside else EXIT_NEGATIVE)


def _dims(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise CisError("--dims expects two comma-separated indices")
    return int(parts[0]), int(parts[1])


def cmd_plot(args) -> int:
    run = _Run("plot", args)
    dims = _dims(args.dims)
    path = Path(args.artifact)
    if path.suffix == ".csv":
        lg = ClosedLoopLog.from_csv(path.read_text())
        svg = plot_time_series(np.array([r.t for r in lg.records]), lg.states, lg.inputs,
                               title=path.name)
    else:
        data = _read_json(args.artifact)
        if "iterates" in data:
            trace = FixedPointTrace.from_json(data)
            svg = plot_sets(trace.iterates, dims, title=f"{trace.mode.value} iterates",
                            labels=[f"H{k}" for k in range(len(trace.iterates))][:10])
        elif "states" in data:
            cert = FeasibilityCertificate.from_json(data)
            svg = plot_sets([VPolytope(cert.window)], dims, trajectory=cert.states,
                            title=f"certificate N={cert.N}")
        elif "records" in data:
            states = np.array([r["state"] for r in data["records"]])
            svg = plot_sets([], dims, trajectory=states, title="closed-loop states")
        else:
            svg = plot_sets([polytope_from_json(data)], dims, title=path.name)
    out = Path(args.out)
    out.write_text(svg)
    run.manifest.outputs.append(str(out))
    return run.finish(EXIT_OK)


BENCH_NOTE = ("Truck-trailer parameters (ks, kd, mass, Ts) and the state/input bounds are "
              "documented substitutes; published volumes for this benchmark depend on "
              "externally sourced values and are not reproducible here.  NC: not computed "
              "(backward refinement is attempted only up to the configured dimension); NA: "
              "the computation returned no result.")


def _fmt_num(v) -> str:
    if isinstance(v, str):
        return v
    return f"{v:.4g}"


def cmd_bench(args) -> int:
    if args.suite != "truck":
        raise CisError(f"unknown benchmark suite {args.suite!r} (available: truck)")
    run = _Run("bench", args)
    cfg = _solver_config(args)
    columns = list(range(1, args.max_m + 1))
    rows = {"certificate_time": {}, "certificate_volume": {}, "certificate_N": {},
            "backward_time": {}, "backward_volume": {}}
    for M in columns:
        model = truck_trailer_model(M, Ts=args.ts)
        n = model.sys.n
        t0 = time.perf_counter()
        cert = horizon_search(model.sys, model.cs, args.n_max, cfg,
                              N_min=max(n + 2, args.n_min if args.n_min else 2 * n + 2))
        dt = time.perf_counter() - t0
        if cert is None:
            rows["certificate_time"][M] = rows["certificate_volume"][M] = "NA"
            rows["certificate_N"][M] = "NA"
            rows["backward_time"][M] = rows["backward_volume"][M] = "NC"
            continue
        hull = build_invariant(cert, model.sys, model.cs)
        run.write_json(f"certificate-M{M}.json", cert.to_json())
        rows["certificate_time"][M] = dt
        rows["certificate_volume"][M] = volume(hull, seed=args.seed, method="exact").value
        rows["certificate_N"][M] = cert.N
        if n > args.backward_max_dim:
            rows["backward_time"][M] = rows["backward_volume"][M] = "NC"
            continue
        t1 = time.perf_counter()
        try:
            trace = backward_fixed_point(model.sys, hull.to_hrep(), model.cs,
                                         TraceMode.INSIDE_OUT, 1e-6, args.backward_max_iter,
                                         check_invariance=False)
        except CisError as exc:
            log.warning("backward refinement failed for M=%d: %s", M, exc)
            rows["backward_time"][M] = rows["backward_volume"][M] = "NA"
            continue
        rows["backward_time"][M] = dt + time.perf_counter() - t1
        rows["backward_volume"][M] = volume(vertex_enumeration(trace.final), seed=args.seed,
                                            method="exact").value
        if not trace.converged:
            rows["backward_time"][M] = f"{rows['backward_time'][M]:.4g} (max-iter)"
    labels = [("certificate_time", "Certificate (horizon search)"), ("certificate_N", "N"),
              ("certificate_volume", "Volume"),
              ("backward_time", "Certificate + backward fixed point"),
              ("backward_volume", "Volume")]
    header = [""] + [f"M={M}" for M in columns]
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + [f"M={M}" for M in columns])
    for key, label in labels:
        vals = [_fmt_num(rows[key].get(M, "NC")) for M in columns]
        md.append("| " + " | ".join([label] + vals) + " |")
        w.writerow([label] + vals)
    params = dict(TRUCK_DEFAULTS, Ts=args.ts)
    text = ("# Truck with M trailers: computation time (s) and invariant-set volume\n\n"
            + "\n".join(md) + "\n\n" + BENCH_NOTE + "\n\nParameters (provenance: substituted): "
            + json.dumps(params, sort_keys=True) + "\n")
    run.write_text("bench.md", text)
    run.write_text("bench.csv", buf.getvalue())
    print(text)
    return run.finish(EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cis-kit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        if name != "plot":
            sp.add_argument("--out", default=".", help="output directory")
        return sp

    def solver_opts(sp):
        sp.add_argument("--restarts", type=int, default=8)
        sp.add_argument("--max-rounds", type=int, default=100)

    sp = add("feas", "search for a trajectory certificate")
    sp.add_argument("--model", required=True, help="model JSON file or builtin name")
    sp.add_argument("--horizon", required=True, help="N or a range LO:HI")
    sp.add_argument("--closed-loop", action="store_true", help="restrict to u = K x + b")
    solver_opts(sp)
    sp.set_defaults(func=cmd_feas)

    sp = add("invariant", "check a certificate's hull")
    sp.add_argument("--model", required=True)
    sp.add_argument("--cert", required=True)
    sp.set_defaults(func=cmd_invariant)

    sp = add("backward", "backward fixed-point iteration")
    sp.add_argument("--model", required=True)
    sp.add_argument("--seed-set", required=True,
                    help="polytope or certificate JSON, or X for the state constraints")
    sp.add_argument("--mode", choices=[m.value for m in TraceMode], default="outside-in")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--max-iter", type=int, default=100)
    sp.set_defaults(func=cmd_backward)

    sp = add("mpc", "closed-loop MPC simulation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--terminal", default="hull", help="hull or set:<polytope JSON>")
    sp.add_argument("--x0", help="comma-separated initial state (default: model's x0)")
    sp.set_defaults(func=cmd_mpc)

    sp = add("plot", "render an artifact as SVG")
    sp.add_argument("artifact")
    sp.add_argument("--out", required=True, help="output SVG path")
    sp.add_argument("--dims", default="0,1")
    sp.set_defaults(func=cmd_plot)

    sp = add("bench", "run a benchmark sweep")
    sp.add_argument("suite")
    sp.add_argument("--max-m", type=int, default=4)
    sp.add_argument("--n-max", type=int, default=24)
    sp.add_argument("--n-min", type=int, default=None,
                    help="first horizon tried (default 2n+2)")
    sp.add_argument("--ts", type=float, default=TRUCK_DEFAULTS["Ts"])
    sp.add_argument("--backward-max-dim", type=int, default=3)
    sp.add_argument("--backward-max-iter", type=int, default=50)
    solver_opts(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SeedNotInvariant as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CisError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
