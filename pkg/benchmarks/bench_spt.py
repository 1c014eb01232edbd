#!/usr/bin/env python3
"""Benchmark the two shortest-path-tree kernels against each other.

Runs the compiled Cython kernel (when built) and the pure-Python twin on
identical CSR arrays across a range of graph sizes, verifies they agree
bit for bit, and reports timings.  The compiled kernel pays a fixed
numpy-conversion cost per graph, so the pure kernel can win on tiny
graphs; the gap inverts quickly as vertex count grows.

Usage: python3 benchmarks/bench_spt.py [--sizes 8,64,512,2048] [--repeat 5]
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from lightmesh import _spt_pure

try:
    from lightmesh import _spt_core
except ImportError:
    _spt_core = None


def build_arrays(n: int, avg_degree: float, seed: int):
    rng = random.Random(seed)
    m = int(n * avg_degree)
    edges = sorted(
        {(rng.randrange(n), rng.randrange(n)) for _ in range(m)} - {(v, v) for v in range(n)})
    edges = [(u, v, float(rng.randint(1, 5))) for u, v in edges]
    edges.sort()
    indptr = [0]
    edge_dst, edge_cost, edge_rank = [], [], []
    by_src: dict[int, list] = {}
    for rank, (u, v, c) in enumerate(edges):
        by_src.setdefault(u, []).append((v, c, rank))
    for u in range(n):
        for v, c, rank in by_src.get(u, ()):
            edge_dst.append(v)
            edge_cost.append(c)
            edge_rank.append(rank)
        indptr.append(len(edge_dst))
    np_arrays = (np.asarray(indptr, dtype=np.int32),
                 np.asarray(edge_dst, dtype=np.int32),
                 np.asarray(edge_cost, dtype=np.float64),
                 np.asarray(edge_rank, dtype=np.int32))
    py_arrays = (indptr, edge_dst, edge_cost, edge_rank)
    return np_arrays, py_arrays, len(edge_dst)


def time_kernel(fn, n, arrays, repeat: int) -> tuple[float, tuple]:
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(n, *arrays, 0)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="8,64,512,2048,8192")
    ap.add_argument("--degree", type=float, default=4.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if _spt_core is None:
        print("compiled kernel not built; benchmarking pure kernel only")
    print(f"{'n':>6} {'edges':>7} {'pure (ms)':>10} {'compiled (ms)':>14} {'speedup':>8}")
    for n in sizes:
        np_arrays, py_arrays, m = build_arrays(n, args.degree, seed=n)
        t_pure, out_pure = time_kernel(_spt_pure.dijkstra, n, py_arrays,
                                       args.repeat)
        if _spt_core is not None:
            t_core, out_core = time_kernel(_spt_core.dijkstra, n, np_arrays,
                                           args.repeat)
            mism = sum(1 for a, b in zip(out_pure[0], out_core[0]) if a != b)
            mism += sum(1 for a, b in zip(out_pure[1], out_core[1]) if a != b)
            mism += sum(1 for a, b in zip(out_pure[2], out_core[2]) if a != b)
            if mism:
                print(f"KERNEL MISMATCH at n={n}: {mism} entries differ")
                return 1
            print(f"{n:>6} {m:>7} {t_pure * 1e3:>10.3f} {t_core * 1e3:>14.3f} "
                  f"{t_pure / t_core:>7.1f}x")
        else:
            print(f"{n:>6} {m:>7} {t_pure * 1e3:>10.3f} {'-':>14} {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
