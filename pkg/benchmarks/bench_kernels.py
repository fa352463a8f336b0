"""Timing comparison of the numba-compiled and pure-numpy kernel paths.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is timed on
training-shaped inputs after a warm-up call (which also absorbs numba's
compilation cost). The active path in the package is the compiled one unless
``SEMFIELD_NO_NUMBA=1`` is set; this script always times both.
"""

import argparse
import time

import numpy as np

from semfield import kernels


def _timeit(fn, args, repeats):
    fn(*args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def make_inputs(rng, n_rays, k_samples):
    sigmas = rng.exponential(1.0, (n_rays, k_samples))
    deltas = rng.uniform(0.01, 0.1, (n_rays, k_samples))
    weights, trans = kernels.numpy_impls["composite_weights"](sigmas, deltas)
    grad_w = rng.normal(size=(n_rays, k_samples))
    edges = np.linspace(0.1, 10.0, k_samples + 1)
    pdf = weights + 1e-5
    u = np.sort(rng.random((n_rays, k_samples)), axis=-1)
    origins = rng.uniform(-1, 1, (n_rays, 3))
    dirs = rng.normal(size=(n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    spheres = np.column_stack([rng.uniform(-1, 1, (8, 3)),
                               rng.uniform(0.1, 0.4, 8)])
    boxes_lo = rng.uniform(-1, 0, (4, 3))
    boxes = np.column_stack([boxes_lo, boxes_lo + rng.uniform(0.2, 0.6, (4, 3))])
    return {
        "composite_weights": (sigmas, deltas),
        "composite_backward_sigma": (deltas, trans, weights, grad_w),
        "sample_pdf": (edges, pdf, u),
        "raycast": (origins, dirs, spheres, boxes,
                    np.zeros(0, dtype=np.int64), np.zeros(0),
                    np.array([-2.0, 0.0, -2.0]), np.array([2.0, 2.2, 2.0]),
                    20.0),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rays", type=int, default=4096)
    parser.add_argument("--samples", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not kernels.USE_NUMBA:
        print("note: numba unavailable or disabled; 'compiled' column "
              "times the uncompiled loop implementation")

    inputs = make_inputs(np.random.default_rng(0), args.rays, args.samples)
    compiled = {name: kernels.loop_impls[name] for name in inputs}
    if kernels.USE_NUMBA:
        from numba import njit
        compiled = {name: njit(cache=True)(fn) for name, fn in compiled.items()}

    print(f"{args.rays} rays x {args.samples} samples, best of "
          f"{args.repeats} runs\n")
    print(f"{'kernel':<26} {'numpy':>10} {'compiled':>10} {'speed-up':>9}")
    for name, arg in inputs.items():
        t_np = _timeit(kernels.numpy_impls[name], arg, args.repeats)
        t_jit = _timeit(compiled[name], arg, args.repeats)
        print(f"{name:<26} {t_np * 1e3:>8.3f}ms {t_jit * 1e3:>8.3f}ms "
              f"{t_np / t_jit:>8.2f}x")


if __name__ == "__main__":
    main()
