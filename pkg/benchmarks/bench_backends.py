#!/usr/bin/env python3
"""Benchmark the compiled trajectory kernels against the vectorized numpy
fallback (the path selected by HOPSIM_BACKEND).

Run:  python benchmarks/bench_backends.py [N]
"""

import os
import sys
import time

import numpy as np

import hopsim as hs
from hopsim.cli import SimulationConfig, resolve_config
from hopsim.lzmodel import LZProblem, integrate_lz


def _config(model, n):
    cfg = resolve_config(SimulationConfig(model=model))
    cfg.N = n
    cfg.seed = 7
    cfg.threads = os.cpu_count() or 1
    cfg.output_times = 51
    return cfg


def time_ensemble(model, n, backend):
    os.environ["HOPSIM_BACKEND"] = backend
    pot = hs.builtin(model)
    cfg = _config(model, n)
    if backend == "numba":  # warm the JIT outside the timed region
        warm = _config(model, 8)
        hs.run_ensemble(pot, warm)
    t0 = time.perf_counter()
    series = hs.run_ensemble(pot, cfg)
    return time.perf_counter() - t0, series.pop_plus[-1]


def time_lz(backend):
    os.environ["HOPSIM_BACKEND"] = backend
    prob = LZProblem(eta=0.05, eps=0.01, s_max=4.0)
    if backend == "numba":
        integrate_lz(LZProblem(eta=0.05, eps=0.01, s_max=1.0))
    t0 = time.perf_counter()
    t = integrate_lz(prob)
    return time.perf_counter() - t0, t


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
    print(f"# trajectory ensemble, N={n}, {os.cpu_count()} cpus")
    print(f"{'case':<24} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for model in ("simple", "arctangent"):
        t_np, pop_np = time_ensemble(model, n, "numpy")
        t_nb, pop_nb = time_ensemble(model, n, "numba")
        assert abs(pop_np - pop_nb) < 5e-3, "backends disagree"
        print(f"{model:<24} {t_np:>9.2f}s {t_nb:>9.2f}s {t_np / t_nb:>8.1f}x")
    t_np, _ = time_lz("numpy")
    t_nb, _ = time_lz("numba")
    print(f"{'lz integrator':<24} {t_np:>9.2f}s {t_nb:>9.2f}s "
          f"{t_np / t_nb:>8.1f}x")
    os.environ.pop("HOPSIM_BACKEND", None)


if __name__ == "__main__":
    main()
