"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 128] [--repeat 5]
"""

import argparse
import time

import numpy as np

from ckmscm import _backend


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, rng):
    lr = rng.standard_normal((size // 2, size // 2, 2))
    n = size * size
    pa, ta = rng.uniform(0.01, 1, (n, 2)), rng.uniform(0, np.pi, (n, 2))
    pb, tb = rng.uniform(0.01, 1, (n, 2)), rng.uniform(0, np.pi, (n, 2))
    return {
        f"bicubic {size // 2}->{size}": lambda k: k.bicubic_upscale(lr, 2, False),
        f"knn k=4 {size}x{size}": lambda k: k.knn_complete(lr, 0, 0, 2, size, size, 4, 2.0),
        f"cosine N=64 {n} px": lambda k: k.toeplitz_cosine(pa, ta, pb, tb, 64, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    if _backend.compiled is None:
        print("compiled kernels are not built; only the numpy fallback is timed")
    rng = np.random.Generator(np.random.PCG64(0))
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, fn in cases(a.size, rng).items():
        t_np = best_of(lambda: fn(_backend.fallback), a.repeat)
        if _backend.compiled is not None:
            t_cy = best_of(lambda: fn(_backend.compiled), a.repeat)
            print(f"{name:<24}{1e3 * t_np:>12.2f}{1e3 * t_cy:>13.2f}{t_np / t_cy:>8.1f}x")
        else:
            print(f"{name:<24}{1e3 * t_np:>12.2f}{'-':>13}{'-':>9}")


if __name__ == "__main__":
    main()
