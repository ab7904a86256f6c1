"""Planar geometry primitives shared by every other module.

All coordinates are meters, all angles radians normalized into [-pi, pi).
Distance computations use ``sqrt(dx*dx + dy*dy)`` (never ``math.hypot``)
so that the pure-Python and compiled routing kernels produce bit-identical
floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a - math.pi


def dist2d(ax: float, ay: float, bx: float, by: float) -> float:
    dx = bx - ax
    dy = by - ay
    return math.sqrt(dx * dx + dy * dy)


def manhattan(ax: float, ay: float, bx: float, by: float) -> float:
    return abs(bx - ax) + abs(by - ay)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.yaw})")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def moved(self, dx: float, dy: float) -> "Pose2D":
        return Pose2D(self.x + dx, self.y + dy, self.yaw)

    def rotated(self, dyaw: float) -> "Pose2D":
        return Pose2D(self.x, self.y, self.yaw + dyaw)

    def forward(self, dist: float) -> "Pose2D":
        return Pose2D(self.x + dist * math.cos(self.yaw),
                      self.y + dist * math.sin(self.yaw),
                      self.yaw)

    def distance_to(self, other: "Pose2D") -> float:
        return dist2d(self.x, self.y, other.x, other.y)


@dataclass(frozen=True)
class AABB:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValueError(f"inverted AABB {self}")

    @staticmethod
    def from_center(cx: float, cy: float, width: float, height: float) -> "AABB":
        return AABB(cx - width / 2.0, cy - height / 2.0,
                    cx + width / 2.0, cy + height / 2.0)

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def center(self) -> tuple[float, float]:
        return ((self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_point(self, x: float, y: float) -> bool:
        """Closed-interval containment (boundary counts)."""
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y

    def contains_aabb(self, other: "AABB") -> bool:
        return (self.min_x <= other.min_x and other.max_x <= self.max_x
                and self.min_y <= other.min_y and other.max_y <= self.max_y)

    def overlaps(self, other: "AABB") -> bool:
        """Strict overlap: shared boundary alone does not collide."""
        return (self.min_x < other.max_x and other.min_x < self.max_x
                and self.min_y < other.max_y and other.min_y < self.max_y)

    def intersects(self, other: "AABB") -> bool:
        """Closed intersection (touching counts); used for tree membership."""
        return (self.min_x <= other.max_x and other.min_x <= self.max_x
                and self.min_y <= other.max_y and other.min_y <= self.max_y)

    def expanded(self, margin: float) -> "AABB":
        return AABB(self.min_x - margin, self.min_y - margin,
                    self.max_x + margin, self.max_y + margin)

    def translated(self, dx: float, dy: float) -> "AABB":
        return AABB(self.min_x + dx, self.min_y + dy,
                    self.max_x + dx, self.max_y + dy)

    def min_dist_to_point(self, x: float, y: float) -> float:
        dx = max(self.min_x - x, 0.0, x - self.max_x)
        dy = max(self.min_y - y, 0.0, y - self.max_y)
        return math.sqrt(dx * dx + dy * dy)


def oriented_hull(cx: float, cy: float, half_l: float, half_w: float, yaw: float) -> AABB:
    """Axis-aligned hull of a rotated rectangle (vehicle footprints mid-turn)."""
    c = abs(math.cos(yaw))
    s = abs(math.sin(yaw))
    ax = half_l * c + half_w * s
    ay = half_l * s + half_w * c
    return AABB(cx - ax, cy - ay, cx + ax, cy + ay)


def seg_point_distance(ax: float, ay: float, bx: float, by: float,
                       px: float, py: float) -> float:
    """Distance from point p to segment ab."""
    dx = bx - ax
    dy = by - ay
    denom = dx * dx + dy * dy
    if denom <= 0.0:
        return dist2d(ax, ay, px, py)
    t = ((px - ax) * dx + (py - ay) * dy) / denom
    t = min(1.0, max(0.0, t))
    return dist2d(ax + t * dx, ay + t * dy, px, py)


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(a1, a2, b1, b2) -> bool:
    """True if closed segments a1-a2 and b1-b2 share any point."""
    d1 = _orient(*b1, *b2, *a1)
    d2 = _orient(*b1, *b2, *a2)
    d3 = _orient(*a1, *a2, *b1)
    d4 = _orient(*a1, *a2, *b2)
    if ((d1 > 0) != (d2 > 0) or d1 == 0 or d2 == 0) and \
       ((d3 > 0) != (d4 > 0) or d3 == 0 or d4 == 0):
        # Possible intersection incl. collinear; confirm with bbox overlap.
        if (min(a1[0], a2[0]) <= max(b1[0], b2[0]) and min(b1[0], b2[0]) <= max(a1[0], a2[0])
                and min(a1[1], a2[1]) <= max(b1[1], b2[1]) and min(b1[1], b2[1]) <= max(a1[1], a2[1])):
            if d1 == 0 and d2 == 0 and d3 == 0 and d4 == 0:
                return True  # collinear with overlapping bbox
            return (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0) or \
                   d1 == 0 or d2 == 0 or d3 == 0 or d4 == 0
    return False


def seg_seg_distance(a1, a2, b1, b2) -> float:
    """Minimum distance between two closed segments."""
    if segments_intersect(a1, a2, b1, b2):
        return 0.0
    return min(
        seg_point_distance(*a1, *a2, *b1),
        seg_point_distance(*a1, *a2, *b2),
        seg_point_distance(*b1, *b2, *a1),
        seg_point_distance(*b1, *b2, *a2),
    )
