"""How certificate volume scales with the number of trailers.

The truck parameters are documented substitutes, so the numbers are only
meaningful relative to each other.  Run:  python3 demos/truck_sweep.py [max_M]
"""
import sys as _sys
import time

from cis_kit import SolverConfig, build_invariant, horizon_search, volume
from cis_kit.models import TRUCK_DEFAULTS, truck_trailer_model

max_M = int(_sys.argv[1]) if len(_sys.argv) > 1 else 2
print("parameters:", TRUCK_DEFAULTS)
print(f"{'M':>2} {'n':>3} {'N':>3} {'margin':>10} {'volume':>11} {'time':>7}")
for M in range(1, max_M + 1):
    model = truck_trailer_model(M)
    n = model.sys.n
    t0 = time.perf_counter()
    # below 2n+2 only random restarts are available, which rarely succeed here
    cert = horizon_search(model.sys, model.cs, 24, SolverConfig(), N_min=2 * n + 2)
    dt = time.perf_counter() - t0
    if cert is None:
        print(f"{M:>2} {n:>3}   no certificate up to N=24")
        continue
    vol = volume(build_invariant(cert, model.sys, model.cs), method="exact").value
    print(f"{M:>2} {n:>3} {cert.N:>3} {cert.margin:>10.3g} {vol:>11.3g} {dt:>6.1f}s")
