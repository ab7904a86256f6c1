"""Shortest-path routing over waypoint graphs.

The hot kernel (a goal-directed label-setting search) exists twice: a
compiled Cython extension and a pure-Python fallback with identical
arithmetic, selected at import. Both settle every node whose priority is
<= the optimal cost, so path reconstruction can honor the smallest-id
tie-break; settled distances are bit-identical between the two kernels
because additions, comparisons, and sqrt follow the same order in IEEE
doubles. Set CITYSIM_PURE=1 to force the fallback.
"""

from __future__ import annotations

import os
from array import array
from typing import Optional

from . import _routing_py

MODE_PED = 1
MODE_VEH = 2

if os.environ.get("CITYSIM_PURE"):
    _kernel = _routing_py
else:
    try:
        from . import _routing_cy as _kernel  # type: ignore[no-redef]
    except ImportError:
        _kernel = _routing_py


def backend_name() -> str:
    return "cython" if _kernel is not _routing_py else "pure-python"


def kernels_available():
    """(name, module) pairs for every importable kernel (for benchmarks)."""
    out = [("pure-python", _routing_py)]
    try:
        from . import _routing_cy
        out.append(("cython", _routing_cy))
    except ImportError:
        pass
    return out


class _CSR:
    """Dense-index CSR view of one mode's arcs; index order == id order."""

    __slots__ = ("ids", "index", "xs", "ys",
                 "fwd_indptr", "fwd_indices", "fwd_weights",
                 "rev_indptr", "rev_indices", "rev_weights",
                 "_incoming_fwd")

    def __init__(self, graph, mode: int):
        self.ids = sorted(graph.nodes)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        n = len(self.ids)
        self.xs = array("d", (graph.nodes[nid].x for nid in self.ids))
        self.ys = array("d", (graph.nodes[nid].y for nid in self.ids))
        fwd: list[list] = [[] for _ in range(n)]
        rev: list[list] = [[] for _ in range(n)]
        for a, b, w, m in graph.all_arcs():
            if not (m & mode):
                continue
            ia, ib = self.index[a], self.index[b]
            fwd[ia].append((ib, w))
            rev[ib].append((ia, w))
        self.fwd_indptr, self.fwd_indices, self.fwd_weights = _pack(fwd)
        self.rev_indptr, self.rev_indices, self.rev_weights = _pack(rev)
        incoming: list[list] = [[] for _ in range(n)]
        for k, v in enumerate(self.fwd_indices):
            incoming[v].append(k)
        self._incoming_fwd = incoming


def _pack(rows: list):
    indptr = array("i", [0])
    indices = array("i")
    weights = array("d")
    for row in rows:
        row.sort()
        for j, w in row:
            indices.append(j)
            weights.append(w)
        indptr.append(len(indices))
    return indptr, indices, weights


_CACHE_ATTR = "_routing_csr_cache"


def _csr_for(graph, mode: int) -> _CSR:
    cache = getattr(graph, _CACHE_ATTR, None)
    version = getattr(graph, "_version", 0)
    if cache is None or cache[0] != version:
        cache = (version, {})
        setattr(graph, _CACHE_ATTR, cache)
    per_mode = cache[1]
    if mode not in per_mode:
        per_mode[mode] = _CSR(graph, mode)
    return per_mode[mode]


def _penalized(csr: _CSR, node_penalty: dict) -> tuple:
    """Copies of arc weights with multipliers applied on arcs into nodes.

    Only the touched arcs are patched; the copies themselves run at C speed.
    """
    fwd_w = array("d", csr.fwd_weights)
    rev_w = array("d", csr.rev_weights)
    for nid, factor in node_penalty.items():
        v = csr.index.get(nid)
        if v is None:
            continue
        for k in csr._incoming_fwd[v]:
            fwd_w[k] = csr.fwd_weights[k] * factor
        for k in range(csr.rev_indptr[v], csr.rev_indptr[v + 1]):
            rev_w[k] = csr.rev_weights[k] * factor
    return fwd_w, rev_w


def _settle(csr: _CSR, src: int, dst: int, fwd_weights) -> tuple:
    """Forward distances from src for every node settled by the search."""
    n = len(csr.ids)
    dist = array("d", [float("inf")] * n)
    settled = bytearray(n)
    found = _kernel.settle(
        n, csr.fwd_indptr, csr.fwd_indices, fwd_weights,
        csr.xs, csr.ys, src, dst, dist, settled,
    )
    return (bool(found), dist, settled)


def _reconstruct(csr: _CSR, src: int, dst: int, dist, settled,
                 fwd_weights, rev_weights) -> list:
    """Lexicographically smallest node-index sequence among optimal paths.

    An arc u->v is tight when dist[u] + w == dist[v] exactly; the arc that
    last relaxed v always is. Nodes that reach dst over tight arcs are
    marked by a reverse sweep, then a forward walk picks the smallest
    marked successor at each step.
    """
    n = len(csr.ids)
    on_optimal = bytearray(n)
    on_optimal[dst] = 1
    stack = [dst]
    while stack:
        v = stack.pop()
        dv = dist[v]
        for k in range(csr.rev_indptr[v], csr.rev_indptr[v + 1]):
            u = csr.rev_indices[k]
            if on_optimal[u] or not settled[u]:
                continue
            if dist[u] + rev_weights[k] == dv:
                on_optimal[u] = 1
                stack.append(u)
    path = [src]
    u = src
    guard = n + 1
    while u != dst and guard > 0:
        guard -= 1
        nxt = -1
        for k in range(csr.fwd_indptr[u], csr.fwd_indptr[u + 1]):
            v = csr.fwd_indices[k]
            if on_optimal[v] and dist[u] + fwd_weights[k] == dist[v]:
                nxt = v
                break  # neighbors are index-sorted; first hit is smallest
        if nxt < 0:
            raise AssertionError("optimal successor missing; kernel invariant broken")
        path.append(nxt)
        u = nxt
    return path


def shortest_path(graph, frm: str, to: str, mode: int,
                  node_penalty: Optional[dict] = None) -> Optional[list]:
    csr = _csr_for(graph, mode)
    src, dst = csr.index[frm], csr.index[to]
    if node_penalty:
        fwd_w, rev_w = _penalized(csr, node_penalty)
    else:
        fwd_w, rev_w = csr.fwd_weights, csr.rev_weights
    found, dist, settled = _settle(csr, src, dst, fwd_w)
    if not found:
        return None
    idx_path = _reconstruct(csr, src, dst, dist, settled, fwd_w, rev_w)
    return [csr.ids[i] for i in idx_path]


def shortest_cost(graph, frm: str, to: str, mode: int,
                  node_penalty: Optional[dict] = None) -> Optional[float]:
    csr = _csr_for(graph, mode)
    src, dst = csr.index[frm], csr.index[to]
    if node_penalty:
        fwd_w, _ = _penalized(csr, node_penalty)
    else:
        fwd_w = csr.fwd_weights
    found, dist, _ = _settle(csr, src, dst, fwd_w)
    if not found:
        return None
    return dist[dst]
