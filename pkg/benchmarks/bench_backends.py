#!/usr/bin/env python
"""Compiled (numba) vs interpreted/vectorized numpy kernels.

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --t-end 5 --cells 40000 --output bench.json
"""

import argparse
import json
import time

import numpy as np

from rabinovich_lab import _kernels
from rabinovich_lab._backend import NUMBA_AVAILABLE, py_func
from rabinovich_lab.field_core import Mode
from rabinovich_lab.integrator import IntegratorConfig, _run
from rabinovich_lab.orbit_lab import fiber_seeds


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_integrator(t_end, repeat):
    u0 = np.array([0.0, 1.71119935, 0.73205081])
    params = np.array([1.0, float(Mode.FULL), 0.0, 2.0, 1.0, 1.0])
    cfg = IntegratorConfig()

    def compiled():
        return _run(_kernels.rabinovich_field, params, _kernels.dopri5_loop, u0, 0.0, t_end, cfg)

    def interpreted():
        return _run(py_func(_kernels.rabinovich_field), params, py_func(_kernels.dopri5_loop),
                    u0, 0.0, t_end, cfg)

    rows = {}
    if NUMBA_AVAILABLE:
        compiled()  # compile / load cache
        t, out = best_of(compiled, repeat)
        rows["numba"] = (t, len(out[1]), out[2][-1])
    t, out = best_of(interpreted, max(1, repeat // 3))
    rows["numpy"] = (t, len(out[1]), out[2][-1])
    return rows


def bench_fiber(n_cells, repeat):
    rng = np.random.default_rng(7)
    hs = rng.uniform(0.0, 3.0, n_cells)
    cs = rng.uniform(1.5, 3.0, n_cells)
    seeds, slack = fiber_seeds(hs, cs, 1.0)
    keep = slack > 0
    hs, cs, seeds = hs[keep], cs[keep], seeds[keep]
    rows = {}
    if NUMBA_AVAILABLE:
        _kernels.fiber_newton_batch(hs[:4], cs[:4], 1.0, seeds[:4], vectorized=False)
        t, out = best_of(lambda: _kernels.fiber_newton_batch(hs, cs, 1.0, seeds, vectorized=False), repeat)
        rows["numba"] = (t, len(hs), out[0])
    t, out = best_of(lambda: _kernels.fiber_newton_batch(hs, cs, 1.0, seeds, vectorized=True), repeat)
    rows["numpy"] = (t, len(hs), out[0])
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=2.0, help="integration span")
    ap.add_argument("--cells", type=int, default=20000, help="fiber solves per batch")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--output", help="write timings as JSON")
    args = ap.parse_args()

    results = {}
    integ = bench_integrator(args.t_end, args.repeat)
    fiber = bench_fiber(args.cells, args.repeat)

    print(f"DOPRI5, FULL mode, t_end={args.t_end:g}")
    for name, (t, steps, _) in integ.items():
        print(f"  {name:<6} {t * 1e3:10.2f} ms  {steps} steps")
    if len(integ) == 2:
        gap = np.abs(integ["numba"][2] - integ["numpy"][2]).max()
        print(f"  speedup {integ['numpy'][0] / integ['numba'][0]:.1f}x, final-state gap {gap:.1e}")

    print(f"fiber Newton, {next(iter(fiber.values()))[1]} level pairs")
    for name, (t, n, _) in fiber.items():
        print(f"  {name:<6} {t * 1e3:10.2f} ms")
    if len(fiber) == 2:
        gap = np.abs(fiber["numba"][2] - fiber["numpy"][2]).max()
        print(f"  speedup {fiber['numpy'][0] / fiber['numba'][0]:.1f}x, max point gap {gap:.1e}")

    results["integrator"] = {k: {"seconds": v[0], "steps": v[1]} for k, v in integ.items()}
    results["fiber"] = {k: {"seconds": v[0], "cells": v[1]} for k, v in fiber.items()}
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
