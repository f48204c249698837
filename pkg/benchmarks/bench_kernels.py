"""Benchmark the numba kernels against the pure-numpy fallback path.

Run:  python benchmarks/bench_kernels.py

The same workloads drive both implementations; the fallback is what you get
with DWE_LAB_NO_NUMBA=1 (or without numba installed).
"""

import time

import numpy as np

from dwe_lab import _kernels as K
from dwe_lab.dynamics import _damping_descriptor, _phi_arrays
from dwe_lab.geometry import build_damping, build_metric


def bench(label, fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    print(f"  {label:24s} {best:8.3f}s")
    return best


def main():
    metric = build_metric("y-channel", eps=0.1)
    damping = build_damping("smooth-well")
    pk = _phi_arrays(metric)
    dk = _damping_descriptor(damping)
    rng = np.random.default_rng(0)

    workloads = []
    Zb = rng.uniform(0.1, 0.9, size=(2000, 4))
    workloads.append(("flow_batch 2000x2000", "flow_batch",
                      (Zb.copy(), 2000, 1e-3, *pk, 1.0, *dk)))
    Zs = rng.uniform(0.1, 0.9, size=(64, 4))
    workloads.append(("traj_samples 64x5000", "traj_samples_batch",
                      (Zs.copy(), 5000, 10, 1e-3, *pk, 1.0)))
    v0 = np.array([0.0, 1.0, 0.0, 0.5])
    v0 /= np.linalg.norm(v0)
    workloads.append(("var_flow 20000 steps", "var_flow",
                      (Zs[0].copy(), v0.copy(), 20000, 1e-3, *pk, 1.0)))
    workloads.append(("monodromy 5000 steps", "monodromy_flow",
                      (Zs[1].copy(), 5000, 1e-3, *pk, 1.0)))

    if K.HAVE_NUMBA:
        print("numba path (after warmup):")
        for label, name, args in workloads:
            K.NUMBA_IMPLS[name](*args)  # warmup/compile
        times_nb = {}
        for label, name, args in workloads:
            times_nb[label] = bench(label, K.NUMBA_IMPLS[name], *args)
    else:
        print("numba unavailable; benchmarking fallback only")
        times_nb = {}

    print("pure-numpy fallback:")
    times_np = {}
    for label, name, args in workloads:
        times_np[label] = bench(label, K.NUMPY_IMPLS[name], *args, repeat=1)

    if times_nb:
        print("speedups (numpy / numba):")
        for label in times_np:
            print(f"  {label:24s} {times_np[label] / times_nb[label]:8.1f}x")


if __name__ == "__main__":
    main()
