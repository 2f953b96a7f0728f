"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--pairs 200000] [--bundles 400] [--repeat 3]

Reports the best wall time per backend and the max difference between the
two results.  The first numba call is timed separately (compilation or cache
load).
"""
import argparse
import time

import numpy as np

from srqr import kernels
from srqr.ccdist import sphere_invariants
from srqr.manifolds import random_sphere


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_distance(n, repeat, rng):
    z = random_sphere(rng, n)
    w = random_sphere(rng, n)
    m, sp, psi = sphere_invariants(z, w)
    t = time.perf_counter()
    kernels.sphere_distance_nb(m[:2], sp[:2], psi[:2])
    first = time.perf_counter() - t
    t_nb, d_nb = best_time(lambda: kernels.sphere_distance_nb(m, sp, psi), repeat)
    t_np, d_np = best_time(lambda: kernels.sphere_distance_np(m, sp, psi), repeat)
    return first, t_nb, t_np, float(np.max(np.abs(d_nb - d_np)))


def bench_flow(n, repeat, rng):
    c = np.array([1.0, 1.0]) / np.sqrt(2)
    # the gauge ball holds well under 1% of the sphere, so draw until n points land in it
    z = np.empty((0, 2), dtype=complex)
    while len(z) < n:
        w = random_sphere(rng, 50 * n)
        z = np.concatenate([z, w[np.abs(1 - w @ c) ** 0.5 < 0.25]])
    z = z[:n]
    z = np.repeat(z[:, None, :], 3, axis=1)
    args = (1.0, np.log(2.0), c[0], c[1], 0.13, 0.22, 1e-8, 0.05, 100000)
    t = time.perf_counter()
    kernels.flow_bundles_nb(z[:1], *args)
    first = time.perf_counter() - t
    t_nb, r_nb = best_time(lambda: kernels.flow_bundles_nb(z, *args), repeat)
    t_np, r_np = best_time(lambda: kernels.flow_bundles_np(z, *args), repeat)
    return first, t_nb, t_np, float(np.max(np.abs(r_nb[0] - r_np[0])))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--pairs", type=int, default=200000)
    ap.add_argument("--bundles", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'size':>9}{'first nb [s]':>14}{'numba [s]':>11}{'numpy [s]':>11}"
          f"{'speedup':>9}{'max diff':>11}")
    for name, n, fn in (("sphere_distance", args.pairs, bench_distance),
                        ("flow_bundles", args.bundles, bench_flow)):
        first, t_nb, t_np, diff = fn(n, args.repeat, rng)
        print(f"{name:<18}{n:>9}{first:>14.3f}{t_nb:>11.4f}{t_np:>11.4f}"
              f"{t_np / t_nb:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
