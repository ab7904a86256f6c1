"""Pure-Python routing kernel: fallback for the compiled extension.

Goal-directed forward search from `origin` with a Euclidean heuristic
toward `htarget`. Distances accumulate front-to-back, exactly like plain
Dijkstra, so settled values equal a Dijkstra oracle's bit for bit. The
heuristic is scaled by (1 - 1e-9): still admissible, and consistent even
after floating-point rounding of the edge weights. Every node whose
priority is <= the optimal cost is settled so the caller can reconstruct
smallest-id optimal paths. Arithmetic mirrors the Cython kernel operation
for operation.
"""

from __future__ import annotations

import heapq
from math import sqrt

HSCALE = 1.0 - 1e-9


def settle(n, indptr, indices, weights, xs, ys, origin, htarget, dist, settled):
    """Relax forward arcs from `origin`; returns 1 if `htarget` was settled."""
    tx = xs[htarget]
    ty = ys[htarget]
    dist[origin] = 0.0
    dx = xs[origin] - tx
    dy = ys[origin] - ty
    heap = [(sqrt(dx * dx + dy * dy) * HSCALE, origin)]
    limit = -1.0
    found = 0
    while heap:
        f, u = heapq.heappop(heap)
        if settled[u]:
            continue
        if found and f > limit:
            break
        settled[u] = 1
        if u == htarget:
            found = 1
            limit = f
        du = dist[u]
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if settled[v]:
                continue
            cand = du + weights[k]
            if cand < dist[v]:
                dist[v] = cand
                dx = xs[v] - tx
                dy = ys[v] - ty
                heapq.heappush(heap, (cand + sqrt(dx * dx + dy * dy) * HSCALE, v))
    return found
