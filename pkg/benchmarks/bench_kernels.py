"""Benchmark the compiled kernels against the pure-Python fallback.

The hot paths of the library are the cyclic Jacobi eigensolve and the vertex
enumeration of the box log-norm maximum: the stabilization solver evaluates
them thousands of times per instance. Batched flow evaluation and training
run on BLAS-backed numpy either way and are not part of the kernel surface.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from shallowflow import _kernels_py

try:
    from shallowflow import _kernels

    COMPILED_AVAILABLE = True
except ImportError:
    _kernels = None
    COMPILED_AVAILABLE = False


def time_call(fn, repeats):
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_pair(name, make_fn, repeats):
    pure = time_call(make_fn(_kernels_py), repeats)
    if COMPILED_AVAILABLE:
        comp = time_call(make_fn(_kernels), repeats)
        print(
            f"{name:<38} pure {pure * 1e6:10.1f} us   compiled {comp * 1e6:10.1f} us"
            f"   speedup {pure / comp:7.1f}x",
            flush=True,
        )
    else:
        print(f"{name:<38} pure {pure * 1e6:10.1f} us   (compiled unavailable)", flush=True)


def main():
    print(f"compiled backend available: {COMPILED_AVAILABLE}", flush=True)
    rng = np.random.default_rng(0)

    for d, repeats in ((4, 100), (8, 50), (16, 20), (32, 5)):
        A = rng.standard_normal((d, d))
        S = 0.5 * (A + A.T)
        bench_pair(
            f"jacobi_eigh d={d}",
            lambda mod, S=S: (lambda: mod.jacobi_eigh(S)),
            repeats,
        )

    for d, repeats in ((2, 100), (4, 50), (8, 5), (10, 2)):
        A = rng.standard_normal((d, d))
        bench_pair(
            f"max_mu2_vertices d={d} (2^{d} masks)",
            lambda mod, A=A: (lambda: mod.max_mu2_vertices(A, 0.1, False)),
            repeats,
        )

    # end-to-end: one stabilization solve under each backend
    from shallowflow import spectral

    A = rng.standard_normal((3, 3))
    box = spectral.OmegaBox(dim=3, alpha=0.1)
    target = spectral.delta_star(A, box).value - 0.05

    def stabilize_with(mod):
        def run():
            saved = spectral.kernels
            spectral.kernels = mod
            try:
                spectral.stabilize(A, box, target)
            finally:
                spectral.kernels = saved

        return run

    pure = time_call(stabilize_with(_kernels_py), 2)
    line = f"{'stabilize d=3 (end to end)':<38} pure {pure * 1e3:10.1f} ms"
    if COMPILED_AVAILABLE:
        comp = time_call(stabilize_with(_kernels), 2)
        line += f"   compiled {comp * 1e3:10.1f} ms   speedup {pure / comp:7.1f}x"
    print(line, flush=True)


if __name__ == "__main__":
    main()
