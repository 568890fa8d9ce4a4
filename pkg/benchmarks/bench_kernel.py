"""Compare the compiled and pure-Python integration kernels.

    python3 benchmarks/bench_kernel.py [--steps N] [--delay-s D] [--repeat R]

Both backends integrate the same closed loop from the same state; the script
checks they agree bit for bit and reports steps per second.
"""
import argparse
import time

import numpy as np

from adaptive_dc import CommGraph, reference_c1_gains, reference_plant_params
from adaptive_dc.scenario import Scenario, Segment
from adaptive_dc.simkernel import IntegratorConfig, available_backends, integrate


def run(backend: str, steps: int, h: float, delay_s: float):
    sc = Scenario((Segment(steps * h, 2.98),))
    graph = CommGraph.path(3).with_delay(delay_s, 0.0)
    t0 = time.perf_counter()
    traj = integrate(reference_plant_params(), reference_c1_gains(), graph, sc,
                     IntegratorConfig(step_s=h, record_every=100), backend=backend)
    return time.perf_counter() - t0, traj


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--step-s", type=float, default=1e-7)
    ap.add_argument("--delay-s", type=float, default=0.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = available_backends()
    best, trajs = {}, {}
    for b in backends:
        times = []
        for _ in range(args.repeat):
            dt, trajs[b] = run(b, args.steps, args.step_s, args.delay_s)
            times.append(dt)
        best[b] = min(times)
        print(f"{b:>7}: {best[b]:.4f} s for {args.steps} steps ({args.steps / best[b]:.3g} steps/s)")
    if len(backends) == 2:
        same = np.array_equal(trajs["python"].state_matrix(), trajs["cython"].state_matrix())
        print(f"speedup: {best['python'] / best['cython']:.1f}x, bit-identical: {same}")
    else:
        print("compiled kernel not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
