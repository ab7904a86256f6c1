"""Quadtree scene graph: static world content and deterministic spatial queries.

Entities live in the leaves of a quadtree over the city extent; an entity
whose footprint spans several leaves is stored in each of them. Blocking
entities participate in collision queries, non-blocking ones do not.
Query results are defined to match a linear scan exactly, with ties broken
by smallest id.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional

from .errors import DuplicateIdError, NoFreeSpaceError, NotFoundError
from .geometry import AABB, Pose2D, dist2d

MAX_DEPTH = 12
SPLIT_THRESHOLD = 8


class Category(str, Enum):
    ROAD_SEGMENT = "road_segment"
    BUILDING = "building"
    VEGETATION = "vegetation"
    URBAN_PROP = "urban_prop"
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    ROBOT = "robot"
    HUMANOID = "humanoid"
    TRAFFIC_SIGNAL = "traffic_signal"
    GENERATED_ASSET = "generated_asset"


# Stable small integers for raster observations. 0 is reserved for "empty".
CATEGORY_IDS = {cat: i + 1 for i, cat in enumerate(Category)}


@dataclass(frozen=True)
class SceneEntity:
    id: str
    category: Category
    footprint: AABB
    pose: Pose2D
    tags: frozenset = frozenset()
    blocking: bool = True

    def has_tag(self, tag: str) -> bool:
        return tag in self.tags


class QuadTreeNode:
    __slots__ = ("bounds", "entities", "children", "depth")

    def __init__(self, bounds: AABB, depth: int = 0):
        self.bounds = bounds
        self.entities: list[SceneEntity] = []
        self.children: Optional[list["QuadTreeNode"]] = None
        self.depth = depth

    def _split(self):
        cx, cy = self.bounds.center
        b = self.bounds
        self.children = [
            QuadTreeNode(AABB(b.min_x, b.min_y, cx, cy), self.depth + 1),
            QuadTreeNode(AABB(cx, b.min_y, b.max_x, cy), self.depth + 1),
            QuadTreeNode(AABB(b.min_x, cy, cx, b.max_y), self.depth + 1),
            QuadTreeNode(AABB(cx, cy, b.max_x, b.max_y), self.depth + 1),
        ]
        entities, self.entities = self.entities, []
        for e in entities:
            for child in self.children:
                if child.bounds.intersects(e.footprint):
                    child.insert(e)

    def insert(self, e: SceneEntity):
        if self.children is not None:
            for child in self.children:
                if child.bounds.intersects(e.footprint):
                    child.insert(e)
            return
        self.entities.append(e)
        if len(self.entities) > SPLIT_THRESHOLD and self.depth < MAX_DEPTH:
            self._split()

    def remove(self, entity_id: str):
        if self.children is not None:
            for child in self.children:
                child.remove(entity_id)
        else:
            self.entities = [e for e in self.entities if e.id != entity_id]


@dataclass
class SceneEditCommand:
    """Deterministic scene edit: spatially anchored add, or remove by id."""

    op: str  # "add" | "remove"
    # add:
    category: Optional[Category] = None
    tags: frozenset = frozenset()
    anchor_category: Optional[Category] = None
    anchor_tag: Optional[str] = None
    offset_distance: float = 2.0
    size: tuple = (1.0, 1.0)
    blocking: bool = True
    near: Optional[tuple] = None  # reference point for anchor resolution
    # remove:
    entity_id: Optional[str] = None


# Compass offsets clockwise from east (unit vectors).
_SQ2 = math.sqrt(0.5)
COMPASS_OFFSETS = [
    (1.0, 0.0), (_SQ2, -_SQ2), (0.0, -1.0), (-_SQ2, -_SQ2),
    (-1.0, 0.0), (-_SQ2, _SQ2), (0.0, 1.0), (_SQ2, _SQ2),
]


class SceneGraph:
    """Spatially indexed static world content.

    Mutations require exclusive access; concurrent reads are safe with each
    other but not with a writer (callers enforce this).
    """

    def __init__(self, extent: AABB):
        self.extent = extent
        self.root = QuadTreeNode(extent)
        self.entity_index: dict[str, SceneEntity] = {}
        # Entities whose footprint misses the extent entirely; kept out of the
        # tree so node invariants hold, but still visible to every query.
        self._outside: list[SceneEntity] = []
        self._edit_counter = 0
        self.meta: dict = {}

    def __len__(self) -> int:
        return len(self.entity_index)

    # ------------------------------------------------------------------ ops

    def insert(self, e: SceneEntity) -> None:
        if e.id in self.entity_index:
            raise DuplicateIdError(f"entity id already present: {e.id}")
        self.entity_index[e.id] = e
        if self.root.bounds.intersects(e.footprint):
            self.root.insert(e)
        else:
            self._outside.append(e)

    def remove(self, entity_id: str) -> SceneEntity:
        e = self.entity_index.pop(entity_id, None)
        if e is None:
            raise NotFoundError(f"no entity with id {entity_id}")
        self.root.remove(entity_id)
        self._outside = [o for o in self._outside if o.id != entity_id]
        return e

    def get(self, entity_id: str) -> SceneEntity:
        e = self.entity_index.get(entity_id)
        if e is None:
            raise NotFoundError(f"no entity with id {entity_id}")
        return e

    def collides(self, footprint: AABB, ignore: Iterable[str] = ()) -> bool:
        """True iff footprint strictly overlaps any blocking entity not ignored."""
        ignore = set(ignore)
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.bounds.intersects(footprint):
                continue
            if node.children is not None:
                stack.extend(node.children)
                continue
            for e in node.entities:
                if e.blocking and e.id not in ignore and footprint.overlaps(e.footprint):
                    return True
        for e in self._outside:
            if e.blocking and e.id not in ignore and footprint.overlaps(e.footprint):
                return True
        return False

    def nearest(self, from_pose: Pose2D, category: Category,
                tag: Optional[str] = None) -> SceneEntity:
        """Matching entity minimizing center distance; ties to smallest id."""
        px, py = from_pose.x, from_pose.y
        best: Optional[tuple[float, str, SceneEntity]] = None
        counter = 0
        heap: list[tuple[float, int, QuadTreeNode]] = [(0.0, counter, self.root)]
        while heap:
            node_dist, _, node = heapq.heappop(heap)
            if best is not None and node_dist > best[0]:
                break
            if node.children is not None:
                for child in node.children:
                    counter += 1
                    heapq.heappush(heap, (child.bounds.min_dist_to_point(px, py),
                                          counter, child))
                continue
            for e in node.entities:
                if e.category is not category:
                    continue
                if tag is not None and tag not in e.tags:
                    continue
                cx, cy = e.footprint.center
                key = (dist2d(px, py, cx, cy), e.id)
                if best is None or key < (best[0], best[1]):
                    best = (key[0], key[1], e)
        for e in self._outside:
            if e.category is not category or (tag is not None and tag not in e.tags):
                continue
            cx, cy = e.footprint.center
            key = (dist2d(px, py, cx, cy), e.id)
            if best is None or key < (best[0], best[1]):
                best = (key[0], key[1], e)
        if best is None:
            what = f"{category.value}" + (f"/{tag}" if tag else "")
            raise NotFoundError(f"no entity matching {what}")
        return best[2]

    def entities_overlapping(self, footprint: AABB) -> list[SceneEntity]:
        """All entities strictly overlapping the footprint, sorted by id."""
        found: dict[str, SceneEntity] = {}
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.bounds.intersects(footprint):
                continue
            if node.children is not None:
                stack.extend(node.children)
                continue
            for e in node.entities:
                if footprint.overlaps(e.footprint):
                    found[e.id] = e
        for e in self._outside:
            if footprint.overlaps(e.footprint):
                found[e.id] = e
        return [found[k] for k in sorted(found)]

    def entities_at_point(self, x: float, y: float) -> list[SceneEntity]:
        """Entities whose footprint contains the point (closed), sorted by id."""
        found: dict[str, SceneEntity] = {}
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.bounds.contains_point(x, y):
                continue
            if node.children is not None:
                stack.extend(node.children)
                continue
            for e in node.entities:
                if e.footprint.contains_point(x, y):
                    found[e.id] = e
        for e in self._outside:
            if e.footprint.contains_point(x, y):
                found[e.id] = e
        return [found[k] for k in sorted(found)]

    def entities_in_radius(self, x: float, y: float, radius: float) -> list[SceneEntity]:
        """Entities whose footprint comes within radius of (x, y), sorted by id."""
        probe = AABB(x - radius, y - radius, x + radius, y + radius)
        out = []
        for e in self.entities_overlapping(probe):
            if e.footprint.min_dist_to_point(x, y) <= radius:
                out.append(e)
        return out

    def iter_entities(self) -> Iterator[SceneEntity]:
        for eid in sorted(self.entity_index):
            yield self.entity_index[eid]

    def next_edit_id(self) -> str:
        while True:
            self._edit_counter += 1
            eid = f"edit_{self._edit_counter:04d}"
            if eid not in self.entity_index:
                return eid

    # ---------------------------------------------------------- scene edits

    def edit(self, cmd: SceneEditCommand) -> Optional[str]:
        """Apply an edit command; returns the new entity id for adds."""
        if cmd.op == "remove":
            if cmd.entity_id is None:
                raise NotFoundError("remove requires entity_id")
            self.remove(cmd.entity_id)
            return None
        if cmd.op != "add":
            raise NotFoundError(f"unknown edit op {cmd.op!r}")
        if cmd.near is not None:
            ref = Pose2D(cmd.near[0], cmd.near[1])
        else:
            cx, cy = self.extent.center
            ref = Pose2D(cx, cy)
        anchor = self.nearest(ref, cmd.anchor_category, cmd.anchor_tag)
        ax, ay = anchor.footprint.center
        w, h = cmd.size
        # Candidate reach grows past the anchor footprint so offsets measure
        # from its boundary, not its center.
        base = cmd.offset_distance + max(anchor.footprint.width,
                                         anchor.footprint.height) / 2.0
        for step in range(10):
            d = base + float(step)
            for ux, uy in COMPASS_OFFSETS:
                fp = AABB.from_center(ax + ux * d, ay + uy * d, w, h)
                if not self.collides(fp):
                    eid = self.next_edit_id()
                    self.insert(SceneEntity(
                        id=eid,
                        category=cmd.category,
                        footprint=fp,
                        pose=Pose2D(*fp.center),
                        tags=frozenset(cmd.tags),
                        blocking=cmd.blocking,
                    ))
                    return eid
        raise NoFreeSpaceError("all candidate placements collide")

    # ---------------------------------------------------------- persistence

    def to_json(self) -> str:
        """Canonical serialization; the quadtree is rebuilt on load."""
        doc = {
            "extent": [self.extent.min_x, self.extent.min_y,
                       self.extent.max_x, self.extent.max_y],
            "entities": [
                {
                    "id": e.id,
                    "category": e.category.value,
                    "pose": {"x": e.pose.x, "y": e.pose.y, "yaw": e.pose.yaw},
                    "footprint": [e.footprint.min_x, e.footprint.min_y,
                                  e.footprint.max_x, e.footprint.max_y],
                    "tags": sorted(e.tags),
                    "blocking": e.blocking,
                }
                for e in self.iter_entities()
            ],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SceneGraph":
        doc = json.loads(text)
        graph = cls(AABB(*doc["extent"]))
        for ed in doc["entities"]:
            graph.insert(SceneEntity(
                id=ed["id"],
                category=Category(ed["category"]),
                footprint=AABB(*ed["footprint"]),
                pose=Pose2D(ed["pose"]["x"], ed["pose"]["y"], ed["pose"]["yaw"]),
                tags=frozenset(ed["tags"]),
                blocking=ed["blocking"],
            ))
        return graph
