# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled routing kernel; see _routing_py for the reference semantics.

The binary heap orders entries by (priority, node index), the exact total
order heapq gives (f, node) tuples, so both kernels settle nodes in the
same sequence and produce bit-identical distances.
"""

from libc.math cimport sqrt, INFINITY
from libc.stdlib cimport free, malloc


cdef struct Entry:
    double f
    int node


cdef inline bint _less(Entry a, Entry b) noexcept:
    if a.f != b.f:
        return a.f < b.f
    return a.node < b.node


cdef inline void _push(Entry* heap, int* size, Entry e) noexcept:
    cdef int i = size[0]
    cdef int parent
    cdef Entry tmp
    heap[i] = e
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(heap[i], heap[parent]):
            tmp = heap[i]
            heap[i] = heap[parent]
            heap[parent] = tmp
            i = parent
        else:
            break


cdef inline Entry _pop(Entry* heap, int* size) noexcept:
    cdef Entry top = heap[0]
    cdef int i = 0, child
    cdef Entry tmp
    size[0] -= 1
    heap[0] = heap[size[0]]
    while True:
        child = 2 * i + 1
        if child >= size[0]:
            break
        if child + 1 < size[0] and _less(heap[child + 1], heap[child]):
            child += 1
        if _less(heap[child], heap[i]):
            tmp = heap[i]
            heap[i] = heap[child]
            heap[child] = tmp
            i = child
        else:
            break
    return top


def settle(int n, const int[:] indptr, const int[:] indices,
           const double[:] weights, const double[:] xs, const double[:] ys,
           int origin, int htarget, double[:] dist, unsigned char[:] settled):
    """Relax forward arcs from `origin`; returns 1 if `htarget` was settled."""
    cdef double HSCALE = 1.0 - 1e-9
    cdef int m = indices.shape[0]
    cdef Entry* heap = <Entry*> malloc((m + n + 2) * sizeof(Entry))
    if heap == NULL:
        raise MemoryError()
    cdef int heap_size = 0
    cdef double tx = xs[htarget]
    cdef double ty = ys[htarget]
    cdef double dx, dy, du, cand, limit = -1.0, f
    cdef int u, v, k, found = 0
    cdef Entry e

    dist[origin] = 0.0
    dx = xs[origin] - tx
    dy = ys[origin] - ty
    e.f = sqrt(dx * dx + dy * dy) * HSCALE
    e.node = origin
    _push(heap, &heap_size, e)

    try:
        while heap_size > 0:
            e = _pop(heap, &heap_size)
            f = e.f
            u = e.node
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
                    e.f = cand + sqrt(dx * dx + dy * dy) * HSCALE
                    e.node = v
                    _push(heap, &heap_size, e)
    finally:
        free(heap)
    return found
