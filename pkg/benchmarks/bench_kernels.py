"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py --size 512 --repeat 5
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from paramstudy import kernels


def workloads(size: int, density: float, seed: int):
    rng = np.random.default_rng(seed)
    raster = (rng.random((size, size)) < density).astype(np.uint8)
    other = (rng.random((size, size)) < density).astype(np.uint8)
    ref = kernels.BACKENDS["python"]
    labels, n = ref.label(raster, 8)
    runs = ref.component_runs(labels, n)[:, 1:]
    runs_b = ref.component_runs(*ref.label(other, 8))[:, 1:]
    return {
        "label (8-conn)": lambda impl: impl.label(raster, 8),
        "component_runs": lambda impl: impl.component_runs(labels, n),
        "intersect_runs": lambda impl: impl.intersect_runs(runs, runs_b),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512, help="square raster side in pixels")
    ap.add_argument("--density", type=float, default=0.4, help="foreground probability")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if "cython" not in kernels.BACKENDS:
        print("compiled extension not built; only the Python fallback is available")
    cases = workloads(args.size, args.density, args.seed)
    names = sorted(kernels.BACKENDS)
    print(f"{args.size}x{args.size} raster, density {args.density}, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for case, fn in cases.items():
        best = {}
        for name in names:
            impl = kernels.BACKENDS[name]
            best[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3
        speedup = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{case:<18}" + "".join(f"{best[n]:>16.2f}" for n in names) + f"{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
