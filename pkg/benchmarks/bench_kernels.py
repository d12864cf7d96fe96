"""Benchmark the compiled geometry kernels against the pure-Python fallback.

Both implementations are exercised in one process: the compiled side through
the dispatching wrappers in ``sparseavatar.geometry.backend`` (which route to
the extension when it is importable) and the fallback by calling
``sparseavatar.geometry.kernels_py`` directly. Each row reports best-of-N
wall time for both, the speedup, and the maximum disagreement between the two
answers — the point of the dual route is that it is checkable, not just fast.

Run:  python3 benchmarks/bench_kernels.py [--queries 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from sparseavatar.geometry import backend, build_bvh
from sparseavatar.geometry import kernels_py
from sparseavatar.geometry.body import ArticulatedBody


def best_of(repeat, fn, *args):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--queries", type=int, default=20000,
                        help="query points for BVH/parity/nearest-vertex rows")
    parser.add_argument("--brute-queries", type=int, default=2000,
                        help="query points for the O(n*m) brute-force row")
    parser.add_argument("--repeat", type=int, default=3, help="timing repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    mesh = ArticulatedBody.default().canonical_mesh
    tri = np.ascontiguousarray(mesh.vertices[mesh.faces])
    bvh = build_bvh(tri)
    queries = rng.uniform([-1.0, -1.0, -0.5], [1.0, 1.0, 2.3], (args.queries, 3))
    brute_q = queries[: args.brute_queries]
    # nearest-vertex queries mirror the skinning workload: points near the
    # body (the grid's ring walk degrades on points far from every vertex)
    lo, hi = mesh.vertices.min(axis=0) - 0.2, mesh.vertices.max(axis=0) + 0.2
    near_q = rng.uniform(lo, hi, (args.queries, 3))

    print(f"mesh: {len(mesh.vertices)} vertices / {len(tri)} triangles")
    print(f"compiled extension available: {backend.HAVE_EXTENSION} "
          f"(active backend: {backend.KERNEL_BACKEND})")
    if not backend.HAVE_EXTENSION:
        print("extension missing; timing the fallback against itself")
    print()

    grid = backend.VertexGrid(mesh.vertices)

    rows = [
        (
            f"BVH closest point ({args.queries} queries)",
            lambda: backend.bvh_query(bvh, queries),
            lambda: kernels_py.bvh_query_py(bvh, queries),
            lambda a, b: float(np.abs(a[0] - b[0]).max()),
        ),
        (
            f"brute-force closest ({args.brute_queries} queries)",
            lambda: backend.brute_closest(brute_q, tri),
            lambda: kernels_py.brute_closest(brute_q, tri),
            lambda a, b: float(np.abs(a[0] - b[0]).max()),
        ),
        (
            f"inside/outside parity ({args.queries} points)",
            lambda: backend.parity_sign(queries, tri),
            lambda: kernels_py.parity_sign_py(queries, tri),
            lambda a, b: float(np.abs(np.asarray(a) - np.asarray(b)).max()),
        ),
        (
            f"nearest vertex, near body ({args.queries} points)",
            lambda: grid.query(near_q),
            lambda: kernels_py.nearest_vertices_py(near_q, mesh.vertices),
            lambda a, b: float(np.abs(np.asarray(a) - np.asarray(b)).max()),
        ),
    ]

    header = f"{'kernel':<42} {'compiled':>10} {'python':>10} {'speedup':>8} {'max |diff|':>11}"
    print(header)
    print("-" * len(header))
    for name, compiled_fn, python_fn, diff_fn in rows:
        t_c, out_c = best_of(args.repeat, compiled_fn)
        t_p, out_p = best_of(args.repeat, python_fn)
        diff = diff_fn(out_c, out_p)
        print(f"{name:<42} {t_c*1e3:>8.2f}ms {t_p*1e3:>8.2f}ms "
              f"{t_p/t_c:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
