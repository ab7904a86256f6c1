"""Three-stage procedural city generator: roads, buildings, street elements.

Roads grow on an axis-aligned grid from a seed node via a priority queue
ordered by (depth + jitter), so growth is breadth-biased but varied. Each
later stage only adds entities and never moves earlier ones. The whole
pipeline is a pure function of its configuration.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .catalog import Catalog, weighted_choice
from .errors import ConfigInvalidError
from .geometry import AABB, Pose2D, dist2d, seg_seg_distance
from .scene import Category, SceneEntity, SceneGraph
from .seeding import make_rng

# Fine-lattice defaults; the waypoint builder reuses these so street
# elements land exactly on fine waypoints.
POINTS_PER_LANE = 17
LANES_PER_SIDEWALK = 4
CROSSWALK_POINTS = 8
FREE_LANE_CLEARANCE = 0.3  # obstacle-free radius around a reserved waypoint


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    width: float = 600.0
    height: float = 600.0
    road_density: float = 40.0          # target road segments per km^2
    building_density: float = 0.9       # target fraction of frontage filled
    street_element_density: float = 0.25  # per-lattice-slot occupancy
    max_road_depth: int = 12
    branch_probability: float = 0.45
    seg_len: float = 60.0
    road_width: float = 8.0
    lane_count: int = 2
    sidewalk_width: float = 3.0
    obstacle_task_mode: bool = False
    catalog: Catalog = field(default_factory=Catalog.default)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigInvalidError("extent must be positive")
        # 0 is accepted and yields zero buildings.
        if not (0.0 <= self.building_density <= 1.0):
            raise ConfigInvalidError("building_density must be in [0, 1]")
        if not (0.0 <= self.street_element_density <= 1.0):
            raise ConfigInvalidError("street_element_density must be in [0, 1]")
        if not (0.0 <= self.branch_probability <= 1.0):
            raise ConfigInvalidError("branch_probability must be in [0, 1]")
        if self.road_density <= 0:
            raise ConfigInvalidError("road_density must be positive")
        if self.max_road_depth < 1:
            raise ConfigInvalidError("max_road_depth must be >= 1")
        if self.seg_len <= 0 or self.road_width <= 0 or self.sidewalk_width < 0:
            raise ConfigInvalidError("road geometry must be positive")

    @property
    def extent(self) -> AABB:
        return AABB(0.0, 0.0, self.width, self.height)


@dataclass(frozen=True)
class RoadSegment:
    id: str
    a: tuple          # (x, y) endpoint
    b: tuple
    width: float
    lane_count: int = 2
    sidewalk_width: float = 3.0

    @property
    def length(self) -> float:
        return dist2d(*self.a, *self.b)

    @property
    def direction(self) -> tuple:
        L = self.length
        return ((self.b[0] - self.a[0]) / L, (self.b[1] - self.a[1]) / L)

    @property
    def left_normal(self) -> tuple:
        dx, dy = self.direction
        return (-dy, dx)

    def point_at(self, s: float) -> tuple:
        dx, dy = self.direction
        return (self.a[0] + dx * s, self.a[1] + dy * s)

    @property
    def right_of_way(self) -> float:
        """Half-width of road plus both sidewalks."""
        return self.width / 2.0 + self.sidewalk_width


@dataclass
class Intersection:
    id: str
    position: tuple
    segment_ids: list

    @property
    def degree(self) -> int:
        return len(self.segment_ids)


@dataclass
class RoadNetwork:
    segments: list
    intersections: list

    def segment_by_id(self, seg_id: str) -> RoadSegment:
        return self._seg_index[seg_id]

    def node_by_id(self, node_id: str) -> Intersection:
        return self._node_index[node_id]

    def __post_init__(self):
        self._seg_index = {s.id: s for s in self.segments}
        self._node_index = {n.id: n for n in self.intersections}
        self._nodes_by_pos = {n.position: n for n in self.intersections}

    def node_at(self, pos: tuple) -> Optional[Intersection]:
        return self._nodes_by_pos.get(pos)

    def endpoints(self, seg: RoadSegment) -> tuple:
        return (self._nodes_by_pos[seg.a], self._nodes_by_pos[seg.b])

    def to_json(self) -> str:
        doc = {
            "segments": [
                {"id": s.id, "a": list(s.a), "b": list(s.b), "width": s.width,
                 "lane_count": s.lane_count, "sidewalk_width": s.sidewalk_width}
                for s in self.segments
            ],
            "intersections": [
                {"id": n.id, "position": list(n.position),
                 "segment_ids": list(n.segment_ids)}
                for n in self.intersections
            ],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RoadNetwork":
        doc = json.loads(text)
        segments = [
            RoadSegment(s["id"], tuple(s["a"]), tuple(s["b"]), s["width"],
                        s["lane_count"], s["sidewalk_width"])
            for s in doc["segments"]
        ]
        intersections = [
            Intersection(n["id"], tuple(n["position"]), list(n["segment_ids"]))
            for n in doc["intersections"]
        ]
        return cls(segments, intersections)


# --------------------------------------------------------------- roads

def generate_roads(cfg: GenConfig, rng=None) -> RoadNetwork:
    """Grow an axis-aligned connected road network from the extent center."""
    cfg.validate()
    if rng is None:
        rng = make_rng(cfg.seed, "procgen")
    L = cfg.seg_len
    extent = cfg.extent
    margin = cfg.road_width / 2.0 + cfg.sidewalk_width
    usable = AABB(extent.min_x + margin, extent.min_y + margin,
                  extent.max_x - margin, extent.max_y - margin)
    area_km2 = (cfg.width / 1000.0) * (cfg.height / 1000.0)
    target_segments = max(1, round(cfg.road_density * area_km2))

    origin = extent.center
    nodes: dict[tuple, dict] = {}   # grid coord -> {"pos", "segs"}
    seg_keys: set[frozenset] = set()
    segments: list[RoadSegment] = []
    node_order: list[tuple] = []

    def grid_pos(cell: tuple) -> tuple:
        return (origin[0] + cell[0] * L, origin[1] + cell[1] * L)

    def ensure_node(cell: tuple) -> dict:
        if cell not in nodes:
            nodes[cell] = {"pos": grid_pos(cell), "segs": []}
            node_order.append(cell)
        return nodes[cell]

    ensure_node((0, 0))
    heap: list = []
    seq = 0

    def push(cell, direction, depth):
        nonlocal seq
        if depth >= cfg.max_road_depth:
            return
        priority = depth + rng.random()
        heapq.heappush(heap, (priority, seq, cell, direction, depth))
        seq += 1

    push((0, 0), (1, 0), 0)

    def clearance_ok(a_pos, b_pos, a_cell, b_cell) -> bool:
        for s in segments:
            # Segments sharing a node with the candidate are exempt.
            if grid_of(s.a) in (a_cell, b_cell) or grid_of(s.b) in (a_cell, b_cell):
                continue
            if seg_seg_distance(a_pos, b_pos, s.a, s.b) < 0.5 * cfg.road_width:
                return False
        return True

    def grid_of(pos: tuple) -> tuple:
        return (round((pos[0] - origin[0]) / L), round((pos[1] - origin[1]) / L))

    while heap and len(segments) < target_segments:
        _, _, cell, (di, dj), depth = heapq.heappop(heap)
        target_cell = (cell[0] + di, cell[1] + dj)
        a_pos = grid_pos(cell)
        b_pos = grid_pos(target_cell)
        key = frozenset((cell, target_cell))

        ok = True
        if key in seg_keys:
            ok = False
        elif not (usable.contains_point(*b_pos) and usable.contains_point(*a_pos)):
            ok = False
        elif target_cell in nodes and len(nodes[target_cell]["segs"]) >= 4:
            ok = False
        elif not clearance_ok(a_pos, b_pos, cell, target_cell):
            ok = False

        if ok:
            seg = RoadSegment(
                id=f"road_{len(segments):04d}",
                a=a_pos, b=b_pos,
                width=cfg.road_width,
                lane_count=cfg.lane_count,
                sidewalk_width=cfg.sidewalk_width,
            )
            segments.append(seg)
            seg_keys.add(key)
            existed = target_cell in nodes
            ensure_node(cell)["segs"].append(seg.id)
            ensure_node(target_cell)["segs"].append(seg.id)
            if not existed:
                push(target_cell, (di, dj), depth + 1)
                if rng.random() < cfg.branch_probability:
                    push(target_cell, (-dj, di), depth + 1)   # left
                if rng.random() < cfg.branch_probability:
                    push(target_cell, (dj, -di), depth + 1)   # right

    intersections = [
        Intersection(id=f"node_{i:04d}", position=nodes[cell]["pos"],
                     segment_ids=list(nodes[cell]["segs"]))
        for i, cell in enumerate(node_order)
        if nodes[cell]["segs"]
    ]
    if not segments:
        raise ConfigInvalidError("extent too small to fit a single road segment")
    return RoadNetwork(segments, intersections)


# ------------------------------------------------- sidewalk lane geometry

def node_clearance(net: RoadNetwork, node: Intersection) -> float:
    """Longitudinal clearance kept free around an intersection node."""
    if node.degree <= 1:
        return 0.0
    widest = max(net.segment_by_id(s).width for s in node.segment_ids)
    sw = max(net.segment_by_id(s).sidewalk_width for s in node.segment_ids)
    return widest / 2.0 + sw


def segment_span(net: RoadNetwork, seg: RoadSegment) -> tuple:
    """Usable (s_start, s_end) along the segment outside intersection boxes."""
    na, nb = net.endpoints(seg)
    c0 = node_clearance(net, na)
    c1 = node_clearance(net, nb)
    if c0 + c1 >= seg.length:
        mid = seg.length / 2.0
        return (mid, mid)
    return (c0, seg.length - c1)


def lane_lateral_offset(seg: RoadSegment, lane: int) -> float:
    """Centerline offset of sidewalk lane `lane`; lane 0 is building-adjacent."""
    frac = (LANES_PER_SIDEWALK - lane - 0.5) / LANES_PER_SIDEWALK
    return seg.width / 2.0 + seg.sidewalk_width * frac


def sidewalk_point(seg: RoadSegment, side: int, lane: int, s: float) -> tuple:
    """World position on sidewalk `side` (0=left of a->b, 1=right), lane, arc s."""
    dx, dy = seg.direction
    nx, ny = seg.left_normal
    if side == 1:
        nx, ny = -nx, -ny
    off = lane_lateral_offset(seg, lane)
    return (seg.a[0] + dx * s + nx * off, seg.a[1] + dy * s + ny * off)


def sidewalk_center_point(seg: RoadSegment, side: int, s: float) -> tuple:
    dx, dy = seg.direction
    nx, ny = seg.left_normal
    if side == 1:
        nx, ny = -nx, -ny
    off = seg.width / 2.0 + seg.sidewalk_width / 2.0
    return (seg.a[0] + dx * s + nx * off, seg.a[1] + dy * s + ny * off)


def lattice_positions(net: RoadNetwork, seg: RoadSegment, side: int,
                      n_points: int = POINTS_PER_LANE) -> list:
    """Per-lane fine lattice: list of lanes, each a list of (x, y)."""
    s0, s1 = segment_span(net, seg)
    if n_points < 2:
        n_points = 2
    step = (s1 - s0) / (n_points - 1)
    return [
        [sidewalk_point(seg, side, lane, s0 + i * step) for i in range(n_points)]
        for lane in range(LANES_PER_SIDEWALK)
    ]


# ------------------------------------------------------------- buildings

def _axis_aligned_box(center: tuple, along: tuple, frontage: float, depth: float) -> AABB:
    """AABB for a building with `frontage` along the road direction."""
    if abs(along[0]) >= abs(along[1]):
        return AABB.from_center(center[0], center[1], frontage, depth)
    return AABB.from_center(center[0], center[1], depth, frontage)


def _building_ok(graph: SceneGraph, fp: AABB) -> bool:
    if graph.collides(fp):
        return False
    for e in graph.entities_overlapping(fp):
        if e.category is Category.ROAD_SEGMENT:
            return False
    return True


def generate_buildings(net: RoadNetwork, graph: SceneGraph, cfg: GenConfig, rng) -> dict:
    """Sample buildings along both sides of every segment, then greedily fill
    residual gaps until the per-side fill fraction reaches the density target.

    Best-effort: returns fill statistics instead of raising on shortfall.
    """
    specs = cfg.catalog.buildings
    counter = 0
    total_frontage = 0.0
    filled_frontage = 0.0
    count = 0

    def place(seg: RoadSegment, side: int, start: float, spec) -> bool:
        nonlocal counter, filled_frontage, count
        dxy = seg.direction
        nx, ny = seg.left_normal
        if side == 1:
            nx, ny = -nx, -ny
        off = seg.width / 2.0 + seg.sidewalk_width + spec.depth / 2.0
        mid = start + spec.frontage / 2.0
        center = (seg.a[0] + dxy[0] * mid + nx * off,
                  seg.a[1] + dxy[1] * mid + ny * off)
        fp = _axis_aligned_box(center, dxy, spec.frontage, spec.depth)
        if not _building_ok(graph, fp):
            return False
        yaw = math.atan2(-ny, -nx)  # face the road
        graph.insert(SceneEntity(
            id=f"bldg_{counter:04d}",
            category=Category.BUILDING,
            footprint=fp,
            pose=Pose2D(center[0], center[1], yaw),
            tags=frozenset(spec.tags) | {spec.name},
            blocking=True,
        ))
        counter += 1
        filled_frontage += spec.frontage
        count += 1
        return True

    for seg in net.segments:
        for side in (0, 1):
            s0, s1 = segment_span(net, seg)
            usable = s1 - s0
            if usable <= 0:
                continue
            total_frontage += usable
            placed: list[tuple] = []  # (start, end) intervals
            cursor = s0
            # Stage 1: density-weighted sampling along the frontage.
            while True:
                spec = weighted_choice(rng, specs)
                if cursor + spec.frontage > s1 + 1e-9:
                    break
                if rng.random() < cfg.building_density:
                    if place(seg, side, cursor, spec):
                        placed.append((cursor, cursor + spec.frontage))
                cursor += spec.frontage
            # Stage 2: greedy gap fill near intersections and road ends.
            if cfg.building_density > 0:
                target = cfg.building_density * usable
                made_progress = True
                while made_progress and _interval_sum(placed) < target:
                    made_progress = False
                    for gap_start, gap_end in _gaps(placed, s0, s1):
                        gap_len = gap_end - gap_start
                        for spec in sorted(specs, key=lambda t: -t.frontage):
                            if spec.frontage > gap_len + 1e-9:
                                continue
                            # Anchor at the gap edge nearest a segment end.
                            if gap_start - s0 <= s1 - gap_end:
                                start = gap_start
                            else:
                                start = gap_end - spec.frontage
                            if place(seg, side, start, spec):
                                placed.append((start, start + spec.frontage))
                                placed.sort()
                                made_progress = True
                                break
                        if made_progress:
                            break

    fill = filled_frontage / total_frontage if total_frontage > 0 else 0.0
    return {
        "frontage_total": total_frontage,
        "frontage_filled": filled_frontage,
        "fill_fraction": fill,
        "building_count": count,
        "shortfall": fill < cfg.building_density * 0.8,
    }


def _interval_sum(intervals: list) -> float:
    return sum(e - s for s, e in intervals)


def _gaps(placed: list, s0: float, s1: float) -> list:
    """Residual gaps ordered ends-first (near intersections and road ends)."""
    gaps = []
    cursor = s0
    for start, end in sorted(placed):
        if start - cursor > 1e-9:
            gaps.append((cursor, start))
        cursor = max(cursor, end)
    if s1 - cursor > 1e-9:
        gaps.append((cursor, s1))
    mid = (s0 + s1) / 2.0
    return sorted(gaps, key=lambda g: -abs((g[0] + g[1]) / 2.0 - mid))


# -------------------------------------------------------- street elements

def generate_street_elements(net: RoadNetwork, graph: SceneGraph,
                             cfg: GenConfig, rng) -> None:
    """Place props on the fine sidewalk lattice.

    Trees go on the innermost (building-adjacent) lane only; everything else
    on the outer three lanes. In obstacle-task mode one lane per lateral
    group is reserved first, across all sidewalks, and every placement
    keeps clear of every reserved waypoint: near intersections, props from
    one sidewalk can encroach on another's groups.
    """
    if cfg.street_element_density <= 0.0:
        return
    specs = cfg.catalog.props
    tree_specs = tuple(s for s in specs if "tree" in s.tags)
    other_specs = tuple(s for s in specs if "tree" not in s.tags)
    counter = len([e for e in graph.entity_index if e.startswith("prop_")])

    sidewalks = []
    reserved_points: list = []
    for seg in net.segments:
        for side in (0, 1):
            lanes = lattice_positions(net, seg, side)
            n = len(lanes[0])
            if cfg.obstacle_task_mode:
                reserved = [rng.randrange(LANES_PER_SIDEWALK) for _ in range(n)]
                reserved_points.extend(lanes[reserved[i]][i] for i in range(n))
            else:
                reserved = [None] * n
            sidewalks.append((seg, lanes, reserved))

    for seg, lanes, reserved in sidewalks:
        n = len(lanes[0])
        for i in range(n):
            for lane in range(LANES_PER_SIDEWALK):
                if reserved[i] == lane:
                    continue
                if rng.random() >= cfg.street_element_density:
                    continue
                pool = tree_specs if lane == 0 else other_specs
                if not pool:
                    continue
                spec = weighted_choice(rng, pool)
                x, y = lanes[lane][i]
                fp = _axis_aligned_box((x, y), seg.direction, spec.width, spec.depth)
                if _prop_blocked(graph, fp, reserved_points):
                    continue
                graph.insert(SceneEntity(
                    id=f"prop_{counter:04d}",
                    category=spec.category,
                    footprint=fp,
                    pose=Pose2D(x, y),
                    tags=frozenset(spec.tags) | {spec.name},
                    blocking=True,
                ))
                counter += 1


def _prop_blocked(graph: SceneGraph, fp: AABB, reserved_points: list) -> bool:
    if graph.collides(fp):
        return True
    for px, py in reserved_points:
        if fp.min_dist_to_point(px, py) < FREE_LANE_CLEARANCE:
            return True
    return False


# -------------------------------------------------------------- pipeline

def generate_city(cfg: GenConfig) -> tuple:
    """Run roads -> buildings -> street elements; deterministic in cfg."""
    cfg.validate()
    rng = make_rng(cfg.seed, "procgen")
    net = generate_roads(cfg, rng)
    graph = SceneGraph(cfg.extent)
    for seg in net.segments:
        dxy = seg.direction
        half = seg.right_of_way
        min_x = min(seg.a[0], seg.b[0])
        max_x = max(seg.a[0], seg.b[0])
        min_y = min(seg.a[1], seg.b[1])
        max_y = max(seg.a[1], seg.b[1])
        if abs(dxy[0]) >= abs(dxy[1]):
            fp = AABB(min_x, min_y - half, max_x, max_y + half)
        else:
            fp = AABB(min_x - half, min_y, max_x + half, max_y)
        mid = seg.point_at(seg.length / 2.0)
        graph.insert(SceneEntity(
            id=seg.id,
            category=Category.ROAD_SEGMENT,
            footprint=fp,
            pose=Pose2D(mid[0], mid[1], math.atan2(dxy[1], dxy[0])),
            tags=frozenset({"road"}),
            blocking=False,
        ))
    stats = generate_buildings(net, graph, cfg, rng)
    generate_street_elements(net, graph, cfg, rng)
    graph.meta["build_stats"] = stats
    return graph, net
