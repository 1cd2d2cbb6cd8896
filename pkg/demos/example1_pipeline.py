"""The uncontrollable 2D example end to end: certificate, invariant hull, backward refinement, picture.

Run:  python3 demos/example1_pipeline.py  (writes demos/out/example1.svg)
"""
from pathlib import Path
import time

import numpy as np

from cis_kit import (SolverConfig, TraceMode, backward_fixed_point, build_invariant,
                     extract_controller, is_controlled_invariant, maximal_ci, mutually_include,
                     solve_open_loop, verify_certificate, volume)
from cis_kit.models import example1
from cis_kit.plotting import plot_sets

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# the system is not controllable: B = [1; 0] and AB = [0.5; 0]
sys, cs = example1()
print("A =", sys.A.tolist(), " B =", sys.B.ravel().tolist())

# one alternating-LP search at horizon 7
t0 = time.perf_counter()
cert = solve_open_loop(sys, cs, 7, SolverConfig(seed=0))
print(f"certificate: N={cert.N}, margin d={cert.margin:.4f}, {time.perf_counter() - t0:.2f}s")
print("all checks pass:", verify_certificate(cert, sys, cs).passed)

# the hull of x_0..x_{N-1} is controlled invariant
hull = build_invariant(cert)
print("hull vertices:", hull.num_vertices, " invariant:", is_controlled_invariant(sys, hull, cs),
      f" area {volume(hull).value:.3f}")

# the lookup controller reproduces the trajectory
ctrl = extract_controller(cert)
print("replay error:", np.abs(ctrl.replay(sys, cert.states[0], cert.N) - cert.states).max())

# growing the hull by backward iteration recovers the maximal invariant set
grown = backward_fixed_point(sys, hull.to_hrep(), cs, TraceMode.INSIDE_OUT)
shrunk = maximal_ci(sys, cs)
print(f"inside-out: {grown.iterations} iterations, outside-in: {shrunk.iterations} iterations, "
      f"same set: {mutually_include(grown.final, shrunk.final, 1e-6)}")

svg = plot_sets([cs.X, grown.final, hull], trajectory=cert.states,
                title="example1: certificate hull and maximal invariant set",
                labels=["X", "maximal CI", "certificate hull"])
(out / "example1.svg").write_text(svg)
print("wrote", out / "example1.svg")
