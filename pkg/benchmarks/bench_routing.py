"""Benchmark the routing kernels: compiled extension vs pure-Python fallback.

Usage: python3 benchmarks/bench_routing.py [--seed N] [--size METERS] [--queries N]
"""

import argparse
import random
import time
from array import array

from citysim.procgen import GenConfig, generate_city
from citysim.routing import MODE_PED, _csr_for, kernels_available
from citysim.waypoints import build_coarse, build_fine


def bench(kernel, csr, queries):
    n = len(csr.ids)
    t0 = time.perf_counter()
    checksum = 0.0
    for src, dst in queries:
        dist = array("d", [float("inf")] * n)
        settled = bytearray(n)
        found = kernel.settle(n, csr.fwd_indptr, csr.fwd_indices,
                              csr.fwd_weights, csr.xs, csr.ys,
                              src, dst, dist, settled)
        if found:
            checksum += dist[dst]
    return time.perf_counter() - t0, checksum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--size", type=float, default=900.0)
    ap.add_argument("--queries", type=int, default=200)
    args = ap.parse_args()

    cfg = GenConfig(seed=args.seed, width=args.size, height=args.size,
                    road_density=60.0, street_element_density=0.0)
    _, net = generate_city(cfg)
    fine = build_fine(net, build_coarse(net))
    csr = _csr_for(fine, MODE_PED)
    n = len(csr.ids)
    active = [i for i in range(n) if csr.fwd_indptr[i + 1] > csr.fwd_indptr[i]]
    rng = random.Random(args.seed)
    queries = [(rng.choice(active), rng.choice(active))
               for _ in range(args.queries)]

    print(f"graph: {n} nodes, {len(csr.fwd_indices)} arcs, "
          f"{args.queries} queries")
    results = {}
    for name, kernel in kernels_available():
        elapsed, checksum = bench(kernel, csr, queries)
        results[name] = (elapsed, checksum)
        print(f"{name:>12}: {elapsed:.3f}s "
              f"({args.queries / elapsed:.0f} queries/s, checksum {checksum:.6f})")
    if len(results) == 2:
        pure_t = results["pure-python"][0]
        cy_t = results["cython"][0]
        assert results["pure-python"][1] == results["cython"][1], \
            "kernels disagree"
        print(f"{'speedup':>12}: {pure_t / cy_t:.1f}x")


if __name__ == "__main__":
    main()
