"""Dynamic world state: the scene plus every moving entity and the event log.

Static content lives in the quadtree scene graph; vehicles, pedestrians,
and agents are kept in flat id-ordered maps and scanned linearly for
dynamic collision (population sizes are small). Movement never
interpenetrates: a move that would overlap a blocking entity is cancelled
by the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .geometry import AABB, Pose2D, dist2d, oriented_hull
from .procgen import RoadNetwork
from .scene import Category, SceneGraph
from .waypoints import WaypointGraph, WaypointKind


@dataclass
class Event:
    tick: int
    agent_id: Optional[str]
    kind: str    # collision_static | collision_dynamic | red_light_violation |
                 # order_event | purchase | message
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tick": self.tick, "agent": self.agent_id,
                "kind": self.kind, "payload": self.payload}


class EventLog:
    """Append-only, tick-ordered event records."""

    def __init__(self):
        self.records: list[Event] = []

    def append(self, event: Event) -> None:
        if self.records and event.tick < self.records[-1].tick:
            raise ValueError("event ticks must be non-decreasing")
        self.records.append(event)

    def since(self, index: int) -> list[Event]:
        return self.records[index:]

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e.to_dict(), separators=(",", ":"))
                         for e in self.records)


# Dynamic entity footprint dimensions (meters).
PEDESTRIAN_SIZE = 0.4
HUMANOID_SIZE = 0.5
ROBOT_SIZE = 0.4
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0

CROSSWALK_CELL_RADIUS = 0.8


class World:
    """Owns all simulation state for one scenario."""

    def __init__(self, scene: SceneGraph, net: RoadNetwork,
                 coarse: WaypointGraph, fine: WaypointGraph,
                 base_seed: int, dt: float = 0.1):
        self.scene = scene
        self.net = net
        self.coarse = coarse
        self.fine = fine
        self.base_seed = base_seed
        self.dt = dt
        self.tick = 0
        self.vehicles: dict = {}
        self.pedestrians: dict = {}
        self.signals: dict = {}
        self.agents: dict = {}
        self.events = EventLog()
        self._crosswalk_cells = self._index_crosswalks()

    def _index_crosswalks(self) -> list:
        cells = []
        for wid in sorted(self.fine.nodes):
            wp = self.fine.nodes[wid]
            if wp.kind is WaypointKind.FINE_CROSSWALK:
                cells.append((wp.x, wp.y, wp.signal_id))
        return cells

    # ------------------------------------------------------------ queries

    def dynamic_footprints(self, exclude: str = "") -> Iterator[tuple]:
        """(id, AABB) for every dynamic blocking body except `exclude`."""
        for vid in self.vehicles:
            if vid != exclude:
                v = self.vehicles[vid]
                yield vid, oriented_hull(v.pose.x, v.pose.y,
                                         VEHICLE_LENGTH / 2.0,
                                         VEHICLE_WIDTH / 2.0, v.pose.yaw)
        for pid in self.pedestrians:
            if pid != exclude:
                p = self.pedestrians[pid]
                yield pid, AABB.from_center(p.pose.x, p.pose.y,
                                            PEDESTRIAN_SIZE, PEDESTRIAN_SIZE)
        for aid in self.agents:
            if aid != exclude:
                yield aid, self.agent_footprint(self.agents[aid])

    def agent_footprint(self, agent) -> AABB:
        if agent.embodiment.value == "vehicle":
            return oriented_hull(agent.pose.x, agent.pose.y,
                                 VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0,
                                 agent.pose.yaw)
        size = HUMANOID_SIZE if agent.embodiment.value == "humanoid" else ROBOT_SIZE
        return AABB.from_center(agent.pose.x, agent.pose.y, size, size)

    def first_obstruction(self, footprint: AABB, exclude: str = ""):
        """(entity_id, category) of the first blocker hit, or None.

        Static blockers win ties so feedback blames the wall, not the crowd.
        """
        hits = [e for e in self.scene.entities_overlapping(footprint) if e.blocking]
        if hits:
            return hits[0].id, hits[0].category
        for oid, fp in self.dynamic_footprints(exclude=exclude):
            if footprint.overlaps(fp):
                if oid in self.vehicles:
                    return oid, Category.VEHICLE
                if oid in self.pedestrians:
                    return oid, Category.PEDESTRIAN
                emb = self.agents[oid].embodiment.value
                return oid, Category(emb) if emb != "vehicle" else Category.VEHICLE
        return None

    def collides_any(self, footprint: AABB, exclude: str = "") -> bool:
        return self.first_obstruction(footprint, exclude=exclude) is not None

    def red_crosswalk_entered(self, old_pose: Pose2D, new_pose: Pose2D):
        """Signal id if this move entered a red crosswalk cell, else None."""
        for (cx, cy, sig_id) in self._crosswalk_cells:
            signal = self.signals.get(sig_id)
            if signal is None or signal.phase != "red":
                continue
            was_in = dist2d(old_pose.x, old_pose.y, cx, cy) <= CROSSWALK_CELL_RADIUS
            now_in = dist2d(new_pose.x, new_pose.y, cx, cy) <= CROSSWALK_CELL_RADIUS
            if now_in and not was_in:
                return sig_id
        return None

    # -------------------------------------------------------- persistence

    def serialize_state(self) -> str:
        """Canonical dynamic-state snapshot for determinism checks."""
        doc = {
            "tick": self.tick,
            "vehicles": [self.vehicles[k].to_dict() for k in sorted(self.vehicles)],
            "pedestrians": [self.pedestrians[k].to_dict()
                            for k in sorted(self.pedestrians)],
            "signals": [self.signals[k].to_dict() for k in sorted(self.signals)],
            "agents": [self.agents[k].to_dict() for k in sorted(self.agents)],
        }
        return json.dumps(doc, separators=(",", ":"))


def build_world(gen_cfg, dt: float = 0.1) -> World:
    """Generate a city and assemble a dynamic world around it."""
    from .procgen import generate_city
    from .waypoints import build_coarse, build_fine

    scene, net = generate_city(gen_cfg)
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    return World(scene, net, coarse, fine, base_seed=gen_cfg.seed, dt=dt)


def network_path_for(map_path: str) -> str:
    if map_path.endswith(".json"):
        return map_path[:-5] + ".network.json"
    return map_path + ".network.json"


def save_map(map_path: str, scene: SceneGraph, net: RoadNetwork) -> None:
    """Scene graph JSON at map_path, road network JSON alongside it."""
    with open(map_path, "w", encoding="utf-8") as fh:
        fh.write(scene.to_json())
    with open(network_path_for(map_path), "w", encoding="utf-8") as fh:
        fh.write(net.to_json())


def load_map(map_path: str, base_seed: int = 0, dt: float = 0.1) -> World:
    """Rebuild a world from serialized scene + network (quadtree and
    waypoint graphs are reconstructed, never stored)."""
    from .waypoints import build_coarse, build_fine

    with open(map_path, "r", encoding="utf-8") as fh:
        scene = SceneGraph.from_json(fh.read())
    with open(network_path_for(map_path), "r", encoding="utf-8") as fh:
        net = RoadNetwork.from_json(fh.read())
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    return World(scene, net, coarse, fine, base_seed=base_seed, dt=dt)
