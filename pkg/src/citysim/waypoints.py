"""Coarse and fine waypoint graphs over a road network, plus A* routing.

The fine graph holds three families of nodes: sidewalk lattice points
(4 lanes x 17 points per sidewalk by default), crosswalk chains (8 points)
bound to their intersection's signal, and directed right-hand vehicle lane
chains. Pedestrian edges are undirected; vehicle edges directed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .errors import ConfigInvalidError, NoPathError, NotFoundError
from .geometry import AABB, dist2d
from .procgen import (
    CROSSWALK_POINTS,
    LANES_PER_SIDEWALK,
    POINTS_PER_LANE,
    RoadNetwork,
    RoadSegment,
    lane_lateral_offset,
    node_clearance,
    segment_span,
)
from . import routing

MODE_PED = routing.MODE_PED
MODE_VEH = routing.MODE_VEH


class WaypointKind(str, Enum):
    COARSE_INTERSECTION = "coarse_intersection"
    COARSE_SIDEWALK = "coarse_sidewalk"
    FINE_SIDEWALK = "fine_sidewalk"
    FINE_CROSSWALK = "fine_crosswalk"
    ROAD_LANE = "road_lane"


PEDESTRIAN_KINDS = {
    WaypointKind.COARSE_INTERSECTION,
    WaypointKind.COARSE_SIDEWALK,
    WaypointKind.FINE_SIDEWALK,
    WaypointKind.FINE_CROSSWALK,
}


@dataclass(frozen=True)
class Waypoint:
    id: str
    x: float
    y: float
    kind: WaypointKind
    lane_index: Optional[int] = None      # only for fine_sidewalk
    segment_id: Optional[str] = None
    signal_id: Optional[str] = None       # only for fine_crosswalk

    def __post_init__(self):
        if (self.lane_index is not None) != (self.kind is WaypointKind.FINE_SIDEWALK):
            raise ValueError("lane_index present iff kind is fine_sidewalk")
        if self.signal_id is not None and self.kind is not WaypointKind.FINE_CROSSWALK:
            raise ValueError("signal_id only allowed on fine_crosswalk")

    @property
    def position(self) -> tuple:
        return (self.x, self.y)


class WaypointGraph:
    """G = (V, E) with per-arc mode masks and Euclidean arc lengths."""

    def __init__(self):
        self.nodes: dict[str, Waypoint] = {}
        self._arcs: dict[str, list] = {}  # id -> [(to_id, weight, modes)]
        # Lane-chain stop points approaching a signalized intersection
        # (vehicle stop lines; kept out of Waypoint.signal_id by invariant).
        self.stop_signals: dict[str, str] = {}
        self._version = 0

    def add_node(self, wp: Waypoint) -> None:
        if wp.id in self.nodes:
            raise ValueError(f"duplicate waypoint id {wp.id}")
        self.nodes[wp.id] = wp
        self._arcs[wp.id] = []
        self._version += 1

    def add_edge(self, a: str, b: str, modes: int = MODE_PED,
                 directed: bool = False) -> None:
        wa, wb = self.nodes[a], self.nodes[b]
        w = dist2d(wa.x, wa.y, wb.x, wb.y)
        self._arcs[a].append((b, w, modes))
        if not directed:
            self._arcs[b].append((a, w, modes))
        self._version += 1

    def arcs(self, node_id: str, mode: int) -> list:
        return [(to, w) for (to, w, m) in self._arcs[node_id] if m & mode]

    def all_arcs(self) -> Iterable[tuple]:
        for a in self.nodes:
            for (b, w, m) in self._arcs[a]:
                yield (a, b, w, m)

    def __len__(self) -> int:
        return len(self.nodes)

    def nodes_of_kind(self, *kinds: WaypointKind) -> list:
        ks = set(kinds)
        return [wp for _, wp in sorted(self.nodes.items()) if wp.kind in ks]

    _GRID_CELL = 15.0

    def _grid(self) -> dict:
        """Lazy spatial buckets for nearest-node queries."""
        cache = getattr(self, "_grid_cache", None)
        if cache is not None and cache[0] == self._version:
            return cache[1]
        buckets: dict = {}
        for nid in sorted(self.nodes):
            wp = self.nodes[nid]
            key = (int(wp.x // self._GRID_CELL), int(wp.y // self._GRID_CELL))
            buckets.setdefault(key, []).append(wp)
        self._grid_cache = (self._version, buckets)
        return buckets

    def nearest_node(self, x: float, y: float,
                     kinds: Optional[set] = None) -> Waypoint:
        """Closest matching waypoint; exact linear-scan semantics with
        (distance, id) ordering, served from expanding grid rings."""
        found = self.nearest_nodes(x, y, kinds=kinds, k=1)
        if not found:
            raise NotFoundError("graph has no matching waypoints")
        return found[0]

    def nearest_nodes(self, x: float, y: float, kinds: Optional[set] = None,
                      k: int = 1) -> list:
        """The k closest matching waypoints ordered by (distance, id)."""
        buckets = self._grid()
        cell = self._GRID_CELL
        cx, cy = int(x // cell), int(y // cell)
        if not buckets:
            return []
        max_ring = 2 + max(max(abs(key[0] - cx), abs(key[1] - cy))
                           for key in buckets)
        found: list = []  # (dist, id, wp)
        for ring in range(max_ring + 1):
            if len(found) >= k and (ring - 1) * cell > found[k - 1][0]:
                break  # every farther bucket is at least this far away
            for kx in range(cx - ring, cx + ring + 1):
                for ky in range(cy - ring, cy + ring + 1):
                    if max(abs(kx - cx), abs(ky - cy)) != ring:
                        continue
                    for wp in buckets.get((kx, ky), ()):
                        if kinds is not None and wp.kind not in kinds:
                            continue
                        found.append((dist2d(x, y, wp.x, wp.y), wp.id, wp))
            found.sort(key=lambda t: t[:2])
            del found[max(k, 1) * 4:]  # keep a safety margin while scanning
        return [wp for _, _, wp in found[:k]]

    def to_json(self) -> str:
        doc = {
            "nodes": [
                {"id": wp.id, "x": wp.x, "y": wp.y, "kind": wp.kind.value,
                 "lane_index": wp.lane_index, "segment_id": wp.segment_id,
                 "signal_id": wp.signal_id}
                for _, wp in sorted(self.nodes.items())
            ],
            "edges": [
                {"a": a, "b": b, "length": w, "modes": m}
                for a, b, w, m in sorted(self.all_arcs())
            ],
        }
        return json.dumps(doc, separators=(",", ":"))


# ------------------------------------------------------------- coarse map

def build_coarse(net: RoadNetwork) -> WaypointGraph:
    """Per sidewalk: start, midpoint, end; intersections link sidewalk ends."""
    g = WaypointGraph()
    for node in net.intersections:
        g.add_node(Waypoint(
            id=f"ci:{node.id}", x=node.position[0], y=node.position[1],
            kind=WaypointKind.COARSE_INTERSECTION))
    for seg in net.segments:
        dxy = seg.direction
        nx, ny = seg.left_normal
        off = seg.width / 2.0 + seg.sidewalk_width / 2.0
        for side in (0, 1):
            sx, sy = (nx, ny) if side == 0 else (-nx, -ny)
            ids = []
            for k, s in enumerate((0.0, seg.length / 2.0, seg.length)):
                wid = f"cs:{seg.id}:{side}:{k}"
                g.add_node(Waypoint(
                    id=wid,
                    x=seg.a[0] + dxy[0] * s + sx * off,
                    y=seg.a[1] + dxy[1] * s + sy * off,
                    kind=WaypointKind.COARSE_SIDEWALK,
                    segment_id=seg.id))
                ids.append(wid)
            g.add_edge(ids[0], ids[1])
            g.add_edge(ids[1], ids[2])
            na, nb = net.endpoints(seg)
            g.add_edge(f"ci:{na.id}", ids[0])
            g.add_edge(f"ci:{nb.id}", ids[2])
    return g


# --------------------------------------------------------------- fine map

def _seg_crosses_aabb(p: tuple, q: tuple, box: AABB) -> bool:
    """Closed segment/AABB intersection via Liang-Barsky clipping."""
    x0, y0 = p
    dx = q[0] - x0
    dy = q[1] - y0
    t0, t1 = 0.0, 1.0
    for d, lo, hi, o in ((dx, box.min_x, box.max_x, x0), (dy, box.min_y, box.max_y, y0)):
        if d == 0.0:
            if o < lo or o > hi:
                return False
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return False
    return True


def build_fine(net: RoadNetwork, coarse: WaypointGraph,
               step: Optional[float] = None,
               lateral_offsets: Optional[list] = None) -> WaypointGraph:
    """Interpolated navigation graph: sidewalk lattices, crosswalks, lanes."""
    if step is not None and step <= 0:
        raise ConfigInvalidError("step must be positive")
    if lateral_offsets is not None and len(lateral_offsets) != LANES_PER_SIDEWALK:
        raise ConfigInvalidError(f"need {LANES_PER_SIDEWALK} lateral offsets")
    g = WaypointGraph()

    def n_points(span: float) -> int:
        if step is None:
            return POINTS_PER_LANE
        return max(2, math.ceil(span / step) + 1)

    def offset_of(seg: RoadSegment, lane: int) -> float:
        if lateral_offsets is not None:
            return lateral_offsets[lane]
        return lane_lateral_offset(seg, lane)

    # Sidewalk lattices.
    side_end_ids: dict[tuple, list] = {}  # (seg_id, side, which_end) -> lane end ids
    for seg in net.segments:
        dxy = seg.direction
        lnx, lny = seg.left_normal
        s0, s1 = segment_span(net, seg)
        n = n_points(s1 - s0)
        spacing = (s1 - s0) / (n - 1)
        for side in (0, 1):
            sx, sy = (lnx, lny) if side == 0 else (-lnx, -lny)
            grid = []
            for lane in range(LANES_PER_SIDEWALK):
                off = offset_of(seg, lane)
                row = []
                for i in range(n):
                    s = s0 + spacing * i
                    wid = f"fs:{seg.id}:{side}:{lane}:{i:02d}"
                    g.add_node(Waypoint(
                        id=wid,
                        x=seg.a[0] + dxy[0] * s + sx * off,
                        y=seg.a[1] + dxy[1] * s + sy * off,
                        kind=WaypointKind.FINE_SIDEWALK,
                        lane_index=lane,
                        segment_id=seg.id))
                    row.append(wid)
                grid.append(row)
            for lane in range(LANES_PER_SIDEWALK):
                for i in range(n - 1):
                    g.add_edge(grid[lane][i], grid[lane][i + 1])
            for lane in range(LANES_PER_SIDEWALK - 1):
                for i in range(n):
                    g.add_edge(grid[lane][i], grid[lane + 1][i])
            side_end_ids[(seg.id, side, "a")] = [grid[k][0] for k in range(LANES_PER_SIDEWALK)]
            side_end_ids[(seg.id, side, "b")] = [grid[k][n - 1] for k in range(LANES_PER_SIDEWALK)]

    # Crosswalks: one chain across each arm of every multi-way node.
    for node in net.intersections:
        if node.degree < 2:
            continue
        clear = node_clearance(net, node)
        for seg_id in node.segment_ids:
            seg = net.segment_by_id(seg_id)
            at_a = seg.a == node.position
            s_c = clear * 0.6 if at_a else seg.length - clear * 0.6
            cx, cy = seg.point_at(s_c)
            lnx, lny = seg.left_normal
            off = seg.width / 2.0 + seg.sidewalk_width / 2.0
            chain = []
            for j in range(CROSSWALK_POINTS):
                lat = -off + (2.0 * off) * j / (CROSSWALK_POINTS - 1)
                wid = f"cw:{node.id}:{seg.id}:{j}"
                g.add_node(Waypoint(
                    id=wid,
                    x=cx + lnx * lat, y=cy + lny * lat,
                    kind=WaypointKind.FINE_CROSSWALK,
                    segment_id=seg.id,
                    signal_id=f"sig:{node.id}"))
                chain.append(wid)
            for j in range(CROSSWALK_POINTS - 1):
                g.add_edge(chain[j], chain[j + 1])
            # Chain ends reach the adjacent sidewalk lattice of this arm.
            which = "a" if at_a else "b"
            for end_wid, side in ((chain[0], 1), (chain[-1], 0)):
                wp = g.nodes[end_wid]
                candidates = side_end_ids[(seg.id, side, which)]
                link = min(candidates,
                           key=lambda c: (dist2d(wp.x, wp.y, g.nodes[c].x, g.nodes[c].y), c))
                g.add_edge(end_wid, link)

    # Corner edges: same-corner sidewalk ends connect without road crossing.
    for node in net.intersections:
        npos = node.position
        arm_rects = []
        endpoints = []  # (waypoint id, position)
        for seg_id in node.segment_ids:
            seg = net.segment_by_id(seg_id)
            at_a = seg.a == node.position
            dxy = seg.direction
            ux, uy = (dxy if at_a else (-dxy[0], -dxy[1]))
            reach = max(node_clearance(net, node) * 1.5, seg.width)
            half_w = seg.width / 2.0
            arm_rects.append(AABB(
                min(npos[0], npos[0] + ux * reach) - (half_w if ux == 0 else 0.0),
                min(npos[1], npos[1] + uy * reach) - (half_w if uy == 0 else 0.0),
                max(npos[0], npos[0] + ux * reach) + (half_w if ux == 0 else 0.0),
                max(npos[1], npos[1] + uy * reach) + (half_w if uy == 0 else 0.0)))
            which = "a" if at_a else "b"
            for side in (0, 1):
                wid = side_end_ids[(seg.id, side, which)][LANES_PER_SIDEWALK - 1]
                wp = g.nodes[wid]
                endpoints.append((wid, (wp.x, wp.y)))
        if node.degree == 1:
            a, b = endpoints[0], endpoints[1]
            g.add_edge(a[0], b[0])
            continue
        for i in range(len(endpoints)):
            for j in range(i + 1, len(endpoints)):
                (wa, pa), (wb, pb) = endpoints[i], endpoints[j]
                if any(_seg_crosses_aabb(pa, pb, rect) for rect in arm_rects):
                    continue
                g.add_edge(wa, wb)

    # Directed vehicle lane chains (right-hand traffic) plus turn arcs.
    chain_ends: dict[tuple, dict] = {}  # (node_pos) -> {"in": [...], "out": [...]}
    for seg in net.segments:
        dxy = seg.direction
        lnx, lny = seg.left_normal
        s0, s1 = segment_span(net, seg)
        n = n_points(s1 - s0)
        spacing = (s1 - s0) / (n - 1)
        lane_off = seg.width / 4.0
        for tag, forward in (("F", True), ("R", False)):
            if forward:
                sx, sy = -lnx, -lny          # right of travel a->b
                s_values = [s0 + spacing * i for i in range(n)]
            else:
                sx, sy = lnx, lny            # right of travel b->a
                s_values = [s1 - spacing * i for i in range(n)]
            ids = []
            for i, s in enumerate(s_values):
                wid = f"rl:{seg.id}:{tag}:{i:02d}"
                g.add_node(Waypoint(
                    id=wid,
                    x=seg.a[0] + dxy[0] * s + sx * lane_off,
                    y=seg.a[1] + dxy[1] * s + sy * lane_off,
                    kind=WaypointKind.ROAD_LANE,
                    segment_id=seg.id))
                ids.append(wid)
            for i in range(n - 1):
                g.add_edge(ids[i], ids[i + 1], modes=MODE_VEH, directed=True)
            start_node = seg.a if forward else seg.b
            end_node = seg.b if forward else seg.a
            chain_ends.setdefault(start_node, {"in": [], "out": []})["out"].append(ids[0])
            chain_ends.setdefault(end_node, {"in": [], "out": []})["in"].append(ids[-1])
            end_inter = net.node_at(end_node)
            if end_inter is not None and end_inter.degree >= 3:
                g.stop_signals[ids[-1]] = f"sig:{end_inter.id}"
    for node in net.intersections:
        ends = chain_ends.get(node.position)
        if not ends:
            continue
        for in_id in sorted(ends["in"]):
            for out_id in sorted(ends["out"]):
                g.add_edge(in_id, out_id, modes=MODE_VEH, directed=True)

    return g


# ------------------------------------------------------------------ astar

def _mode_mask(mode: str) -> int:
    if mode == "pedestrian":
        return MODE_PED
    if mode == "vehicle":
        return MODE_VEH
    raise ConfigInvalidError(f"unknown mode {mode!r}")


def _check_traversable(g: WaypointGraph, node_id: str, mode: str) -> None:
    wp = g.nodes.get(node_id)
    if wp is None:
        raise NotFoundError(f"waypoint {node_id} not in graph")
    is_lane = wp.kind is WaypointKind.ROAD_LANE
    if mode == "vehicle" and not is_lane:
        raise NoPathError(f"{node_id} is not vehicle-traversable")
    if mode == "pedestrian" and is_lane:
        raise NoPathError(f"{node_id} is not pedestrian-traversable")


def astar(g: WaypointGraph, frm: str, to: str, mode: str = "pedestrian",
          node_penalty: Optional[dict] = None) -> list:
    """Minimum-Euclidean-length path; ties resolve to the lexicographically
    smallest node-id sequence (under exact float cost equality)."""
    _check_traversable(g, frm, mode)
    _check_traversable(g, to, mode)
    if frm == to:
        return [frm]
    path = routing.shortest_path(g, frm, to, _mode_mask(mode), node_penalty)
    if path is None:
        raise NoPathError(f"no {mode} path {frm} -> {to}")
    return path


def astar_cost(g: WaypointGraph, frm: str, to: str, mode: str = "pedestrian",
               node_penalty: Optional[dict] = None) -> float:
    _check_traversable(g, frm, mode)
    _check_traversable(g, to, mode)
    if frm == to:
        return 0.0
    cost = routing.shortest_cost(g, frm, to, _mode_mask(mode), node_penalty)
    if cost is None:
        raise NoPathError(f"no {mode} path {frm} -> {to}")
    return cost


def path_length(g: WaypointGraph, path: list) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        wa, wb = g.nodes[a], g.nodes[b]
        total += dist2d(wa.x, wa.y, wb.x, wb.y)
    return total
