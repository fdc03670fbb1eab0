"""Time the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat 5]

Workloads are sized like a real pipeline run (hash-grid training batches,
res-128 extraction, 64x64 rasterization, observability masking).
"""

import argparse
import time

import numpy as np

from meshdistill._kernels import _numpy_impl
from meshdistill.mc_tables import TRI_TABLE

try:
    from meshdistill._kernels import _fast
except ImportError:
    _fast = None


def make_workloads(rng):
    table = rng.normal(size=(2 ** 15, 2)).astype(np.float32)
    idx = rng.integers(0, 2 ** 15, size=(8192, 8)).astype(np.int64)
    w = rng.dirichlet(np.ones(8), size=8192)
    gout = rng.normal(size=(8192, 2)).astype(np.float32)

    tau = rng.exponential(0.5, size=(4096, 64))

    x = np.linspace(-1, 1, 129)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"))
    values = np.linalg.norm(g, axis=0) - 0.5

    tris = 4000
    xy = rng.uniform(-4, 68, size=(tris, 3, 2))
    invz = 1.0 / rng.uniform(1.0, 3.0, size=(tris, 3))

    n_rays = 16384
    origins = np.tile([[0.0, 0.0, -2.0]], (n_rays, 1))
    dirs = rng.normal(size=(n_rays, 3)) * np.array([0.3, 0.3, 0.05]) \
        + np.array([0.0, 0.0, 1.0])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    ta = (-1.0 - origins) / safe
    tb = (1.0 - origins) / safe
    t0 = np.maximum(np.minimum(ta, tb).max(axis=1), 0.0)
    t1 = np.maximum(ta, tb).min(axis=1)
    keep = t1 > t0
    origins, dirs, t0, t1 = (np.ascontiguousarray(a[keep])
                             for a in (origins, dirs, t0, t1))
    res = np.array([256, 256, 256], dtype=np.int64)

    x01 = rng.uniform(0.0, 1.0, size=(8192, 3))
    resolutions = np.unique(np.round(
        16 * (256 / 16) ** (np.arange(8) / 7)).astype(np.int64))

    def bench_gather(impl):
        impl.trilerp_gather(table, idx, w)

    def bench_scatter(impl):
        grad = np.zeros_like(table)
        impl.trilerp_scatter(grad, idx, w, gout)

    def bench_hash(impl):
        impl.hash_corners(x01, resolutions, 2 ** 15)

    def bench_composite(impl):
        impl.composite(tau)

    def bench_mc(impl):
        impl.mc_collect(values, 0.0, TRI_TABLE)

    def bench_raster(impl):
        impl.raster_fill(xy, invz, 64, 64, 1e-7)

    def bench_dda(impl):
        out = np.zeros((256, 256, 256), dtype=np.uint8)
        impl.dda_mark(origins, dirs, t0, t1, np.full(3, -1.0),
                      np.full(3, 1.0), res, out)

    return [
        ("trilerp_gather (8192x8, T=32768)", bench_gather),
        ("trilerp_scatter (8192x8)", bench_scatter),
        ("hash_corners (8192 pts, 8 levels)", bench_hash),
        ("composite (4096x64)", bench_composite),
        ("mc_collect (res 128 sphere)", bench_mc),
        ("raster_fill (4000 tris, 64x64)", bench_raster),
        ("dda_mark (16k rays, 256^3)", bench_dda),
    ]


def time_one(fn, impl, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(impl)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5,
                    help="take the best of this many runs")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    workloads = make_workloads(rng)

    header = f"{'kernel':<36}{'numpy':>10}{'cython':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, fn in workloads:
        t_np = time_one(fn, _numpy_impl, args.repeat)
        if _fast is None:
            print(f"{name:<36}{t_np * 1e3:>8.2f}ms{'n/a':>10}{'':>9}")
            continue
        t_cy = time_one(fn, _fast, args.repeat)
        print(f"{name:<36}{t_np * 1e3:>8.2f}ms{t_cy * 1e3:>8.2f}ms"
              f"{t_np / t_cy:>8.1f}x")
    if _fast is None:
        print("\ncompiled extension not built; showing fallback only")


if __name__ == "__main__":
    main()
