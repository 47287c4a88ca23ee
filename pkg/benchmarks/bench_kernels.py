"""Compare the compiled and numpy kernel backends on one MPPI step.

    python3 benchmarks/bench_kernels.py --samples 4096 --repeats 20
"""
import argparse
import statistics
import time

import numpy as np

from tractionnav import kernels
from tractionnav.camera import Camera, render_oracle_image
from tractionnav.control import ControlSequence, MpcConfig, MppiConfig, mppi_step
from tractionnav.kinodynamics import State2D
from tractionnav.world import Patch, TractionField


def bench_backend(name, samples, repeats, horizon, clearance_samples):
    backend = kernels.load(name)
    saved = kernels.rollout_costs
    kernels.rollout_costs = backend.rollout_costs
    try:
        cam = Camera()
        pose = State2D(0, 0, 0)
        field = TractionField(0.9, 0.9, [Patch((3.0, 0.5), 0.5, 0.1), Patch((2.5, -1.0), 0.4, 0.0, height=1.0)])
        img = render_oracle_image(pose, field, cam.intr, cam.extr)
        cfg = MpcConfig(N=horizon, clearance_samples=clearance_samples)
        mcfg = MppiConfig(num_samples=samples)
        warm = ControlSequence(np.tile([0.5, 0.0], (horizon, 1)))
        times = []
        for i in range(repeats + 1):
            rng = np.random.default_rng([0, i])
            t0 = time.perf_counter()
            mppi_step(pose, (4.0, 0.0), img, warm, mcfg, cfg, cam, rng)
            if i:  # first call warms caches
                times.append(time.perf_counter() - t0)
    finally:
        kernels.rollout_costs = saved
    return times


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=4096)
    ap.add_argument("--horizon", type=int, default=20)
    ap.add_argument("--clearance-samples", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"K={args.samples} N={args.horizon} M={args.clearance_samples}, {args.repeats} repeats")
    results = {}
    for name in kernels.available():
        t = bench_backend(name, args.samples, args.repeats, args.horizon, args.clearance_samples)
        results[name] = statistics.median(t)
        print(f"{name:>8}: median {1e3 * results[name]:7.1f} ms   min {1e3 * min(t):7.1f} ms")
    if len(results) == 2:
        print(f"speedup: {results['numpy'] / results['cython']:.1f}x")


if __name__ == "__main__":
    main()
