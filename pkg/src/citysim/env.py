"""Gym-like agent-environment interface: embodied agents, primitive actions,
observations, and synchronous / asynchronous stepping.

Sync mode executes one action per registered agent in ascending id order,
then a traffic tick. Async mode buffers at most one pending action per
available agent and drains the buffer at a fixed interval on a simulated
clock (wall-clock pacing exists only in the protocol server). Blocked
movements never interpenetrate and always log exactly one collision event.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import (
    BusyError,
    MalformedActionError,
    ScenarioInvalidError,
    UnknownAgentError,
)
from .geometry import AABB, Pose2D, dist2d, normalize_angle
from .procgen import GenConfig
from .scene import CATEGORY_IDS, Category, SceneEntity
from .seeding import make_rng
from .traffic import TrafficConfig, spawn_population, step_traffic
from .waypoints import WaypointKind
from .world import World, build_world, Event


class Embodiment(str, Enum):
    HUMANOID = "humanoid"
    ROBOT = "robot"
    VEHICLE = "vehicle"


STEP_LENGTH = {Embodiment.HUMANOID: 0.5, Embodiment.ROBOT: 0.25}
INTERACT_RANGE = 1.5
CONVERSE_RANGE = 5.0
WHEELBASE = 2.7
MAX_STEER = 0.6
VEHICLE_ACCEL = 3.0
VEHICLE_BRAKE = 6.0
VEHICLE_VMAX = 14.0


@dataclass
class AgentState:
    id: str
    embodiment: Embodiment
    pose: Pose2D
    speed: float = 1.5                      # travel speed, m/s
    energy: float = 100.0
    money_cents: int = 0
    inventory: list = field(default_factory=list)
    seated: bool = False
    in_vehicle: bool = False
    riding_scooter: bool = False
    carrying: bool = False
    inbox: list = field(default_factory=list)
    controls: dict = field(default_factory=lambda: {"throttle": 0.0,
                                                    "brake": 0.0,
                                                    "steering": 0.5})
    vehicle_speed: float = 0.0
    vehicle_ref: Optional[str] = None
    gaze: int = 0
    fov: float = math.pi / 2.0
    last_feedback: Optional["Feedback"] = None
    # Delivery agents move at speed*dt per step instead of a fixed stride.
    speed_stride: bool = False
    stride_multiplier: float = 1.0

    @property
    def money(self) -> float:
        return self.money_cents / 100.0

    def step_length(self, dt: float) -> float:
        if self.speed_stride:
            mult = self.stride_multiplier if self.riding_scooter else 1.0
            return self.speed * dt * mult
        return STEP_LENGTH.get(self.embodiment, 0.5)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "embodiment": self.embodiment.value,
            "pose": [self.pose.x, self.pose.y, self.pose.yaw],
            "speed": self.speed,
            "vitals": {"energy": self.energy, "money": self.money},
            "flags": {"seated": self.seated, "in_vehicle": self.in_vehicle,
                      "riding_scooter": self.riding_scooter,
                      "carrying": self.carrying},
            "inventory": [i.get("name", i.get("kind", "?")) for i in self.inventory],
        }


@dataclass(frozen=True)
class ActionCommand:
    agent_id: str
    verb: str
    args: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(doc: dict) -> "ActionCommand":
        if not isinstance(doc, dict) or "verb" not in doc:
            raise MalformedActionError("action needs a verb")
        return ActionCommand(doc.get("agent_id", ""), doc["verb"],
                             dict(doc.get("args", {})))


@dataclass
class Feedback:
    verb: str
    outcome: str                 # ok | blocked | invalid
    collision: Optional[str] = None   # category of what was hit
    signal_violation: bool = False
    reason: Optional[str] = None
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"verb": self.verb, "outcome": self.outcome,
                "collision": self.collision,
                "signal_violation": self.signal_violation,
                "reason": self.reason}


@dataclass(frozen=True)
class RasterConfig:
    height: int = 64
    width: int = 64
    cell: float = 0.5            # meters per cell
    view_radius: float = 30.0    # scene-graph view radius


class Observation:
    """Immutable post-tick snapshot handed to one agent.

    The semantic raster is computed lazily from the frozen entity snapshot,
    so skipping it costs nothing.
    """

    def __init__(self, agent_pose: Pose2D, tick: int, snapshot: list,
                 messages: list, feedback: Optional[Feedback],
                 raster_cfg: RasterConfig):
        self.agent_pose = agent_pose
        self.compass = agent_pose.yaw
        self.tick = tick
        self.scene_graph_view = snapshot
        self.messages = messages
        self.last_action_feedback = feedback
        self._raster_cfg = raster_cfg
        self._raster = None

    @property
    def local_raster(self) -> np.ndarray:
        if self._raster is None:
            self._raster = _rasterize(self.agent_pose, self.scene_graph_view,
                                      self._raster_cfg)
        return self._raster

    def to_dict(self, include_raster: bool = False) -> dict:
        doc = {
            "pose": [self.agent_pose.x, self.agent_pose.y, self.agent_pose.yaw],
            "compass": self.compass,
            "tick": self.tick,
            "scene_graph_view": [
                {"id": s["id"], "category": s["category"],
                 "pose": s["pose"], "footprint": s["footprint"],
                 "tags": s["tags"]}
                for s in self.scene_graph_view
            ],
            "messages": list(self.messages),
            "last_action_feedback": (self.last_action_feedback.to_dict()
                                     if self.last_action_feedback else None),
        }
        if include_raster:
            doc["raster"] = self.local_raster.tolist()
        return doc


_ZORDER = {
    Category.ROAD_SEGMENT: 0,
    Category.VEGETATION: 1,
    Category.URBAN_PROP: 2,
    Category.BUILDING: 3,
    Category.TRAFFIC_SIGNAL: 4,
    Category.GENERATED_ASSET: 5,
    Category.VEHICLE: 6,
    Category.PEDESTRIAN: 7,
    Category.ROBOT: 8,
    Category.HUMANOID: 9,
}


def _rasterize(pose: Pose2D, snapshot: list, cfg: RasterConfig) -> np.ndarray:
    """Egocentric semantic grid; row 0 is farthest ahead, agent at center."""
    h, w, cell = cfg.height, cfg.width, cfg.cell
    rows = (h / 2.0 - np.arange(h) - 0.5) * cell   # forward offsets
    cols = (np.arange(w) - w / 2.0 + 0.5) * cell   # rightward offsets
    fwd = rows[:, None]
    right = cols[None, :]
    cos_y = math.cos(pose.yaw)
    sin_y = math.sin(pose.yaw)
    # right-hand offset vector is (sin, -cos) for heading (cos, sin)
    xw = pose.x + fwd * cos_y + right * sin_y
    yw = pose.y + fwd * sin_y - right * cos_y
    raster = np.zeros((h, w), dtype=np.uint8)
    for item in sorted(snapshot, key=lambda s: _ZORDER[Category(s["category"])]):
        fp = item["footprint"]
        mask = ((xw >= fp[0]) & (xw <= fp[2]) & (yw >= fp[1]) & (yw <= fp[3]))
        raster[mask] = CATEGORY_IDS[Category(item["category"])]
    return raster


# ------------------------------------------------------------ verb registry

_MOVE_VERBS = {"step_forward", "step_backward", "move_left", "move_right",
               "rotate", "stop"}
_VEHICLE_VERBS = {"throttle", "brake", "steering", "stop"}
_OBS_VERBS = {"look_up", "look_down", "focus", "take_photo"}
_SOCIAL_VERBS = {"converse", "point_direction", "wave_hand", "argue",
                 "send_message"}
_ALWAYS = {"do_nothing", "evaluate", "send_message", "take_photo"}

VERBS = (_MOVE_VERBS | _VEHICLE_VERBS | _OBS_VERBS | _SOCIAL_VERBS | _ALWAYS |
         {"pick_up", "drop", "carry", "put_down", "sit_down", "stand_up",
          "open_door", "enter_car", "exit_car", "ride_scooter"})


def legal_verbs(agent: AgentState) -> set:
    """The verb set an agent may use given embodiment and status flags."""
    if agent.in_vehicle or agent.embodiment is Embodiment.VEHICLE:
        verbs = set(_VEHICLE_VERBS) | _OBS_VERBS | _ALWAYS
        if agent.in_vehicle:
            verbs.add("exit_car")
        return verbs
    if agent.seated:
        return _OBS_VERBS | _SOCIAL_VERBS | _ALWAYS | {"stand_up"}
    verbs = _MOVE_VERBS | _OBS_VERBS | _ALWAYS
    if agent.embodiment is Embodiment.HUMANOID:
        verbs |= _SOCIAL_VERBS | {"pick_up", "drop", "carry", "put_down",
                                  "sit_down", "stand_up", "open_door",
                                  "enter_car", "ride_scooter"}
    else:  # robot
        verbs |= {"send_message", "point_direction"}
    return verbs


def _validate_params(cmd: ActionCommand) -> None:
    if cmd.verb not in VERBS:
        raise MalformedActionError(f"unknown verb {cmd.verb!r}")
    a = cmd.args
    if cmd.verb in ("throttle", "brake", "steering"):
        u = a.get("u")
        if not isinstance(u, (int, float)) or not (0.0 <= u <= 1.0):
            raise MalformedActionError(f"{cmd.verb} needs u in [0, 1]")
    if cmd.verb in ("rotate", "point_direction"):
        theta = a.get("theta")
        if not isinstance(theta, (int, float)) or not (-math.pi <= theta < math.pi):
            raise MalformedActionError(f"{cmd.verb} needs theta in [-pi, pi)")
    if cmd.verb == "send_message" and ("to" not in a or "text" not in a):
        raise MalformedActionError("send_message needs to and text")


# ------------------------------------------------------------- environment

@dataclass
class ScenarioConfig:
    gen: GenConfig
    seed: int = 0
    agents: list = field(default_factory=list)  # {id?, embodiment, spawn_waypoint?, vitals?}
    n_vehicles: int = 0
    n_pedestrians: int = 0
    mode: str = "sync"
    interval: float = 0.1
    raster: RasterConfig = field(default_factory=RasterConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)

    @staticmethod
    def from_dict(doc: dict) -> "ScenarioConfig":
        gen_doc = doc.get("gen", {})
        gen = GenConfig(**gen_doc) if isinstance(gen_doc, dict) else gen_doc
        tr = doc.get("traffic", {})
        return ScenarioConfig(
            gen=gen,
            seed=doc.get("seed", gen.seed),
            agents=list(doc.get("agents", [])),
            n_vehicles=tr.get("n_vehicles", 0),
            n_pedestrians=tr.get("n_pedestrians", 0),
            mode=doc.get("mode", "sync"),
            interval=doc.get("interval", 0.1),
        )


class Environment:
    """Owns the world; single-writer stepping, snapshot observations."""

    def __init__(self, scenario: ScenarioConfig,
                 world: Optional[World] = None):
        self.scenario = scenario
        self.raster_cfg = scenario.raster
        self.interval = scenario.interval
        if scenario.interval <= 0:
            raise ScenarioInvalidError("interval must be positive")
        self.world = world if world is not None else self._build(scenario)
        self.evaluator: Optional[Callable] = None
        self.tick_hooks: list[Callable] = []
        self.extra_verbs: dict[str, Callable] = {}
        self._event_cursor = 0
        self._register_agents(scenario)

    def register_verb(self, verb: str, handler: Callable) -> None:
        """Task modules add domain verbs: handler(agent, args) -> Feedback."""
        self.extra_verbs[verb] = handler

    @staticmethod
    def _build(scenario: ScenarioConfig) -> World:
        world = build_world(scenario.gen, dt=scenario.interval)
        world.base_seed = scenario.seed
        spawn_population(world, scenario.n_vehicles, scenario.n_pedestrians,
                         rng=make_rng(scenario.seed, "spawn"),
                         cfg=scenario.traffic)
        return world

    def _register_agents(self, scenario: ScenarioConfig) -> None:
        side_ids = sorted(w.id for w in self.world.fine.nodes.values()
                          if w.kind is WaypointKind.FINE_SIDEWALK)
        lane_ids = sorted(w.id for w in self.world.fine.nodes.values()
                          if w.kind is WaypointKind.ROAD_LANE)
        auto_cursor = 0
        for i, spec in enumerate(scenario.agents):
            aid = spec.get("id", f"agent_{i}")
            if aid in self.world.agents:
                raise ScenarioInvalidError(f"duplicate agent id {aid}")
            emb = Embodiment(spec.get("embodiment", "humanoid"))
            wp_id = spec.get("spawn_waypoint")
            pool = lane_ids if emb is Embodiment.VEHICLE else side_ids
            if wp_id is None:
                if not pool:
                    raise ScenarioInvalidError("map has no spawn waypoints")
                # deterministic spread over the waypoint pool
                stride = max(1, len(pool) // max(1, len(scenario.agents) + 1))
                tries = 0
                while True:
                    wp_id = pool[(auto_cursor * stride + tries * 7) % len(pool)]
                    wp = self.world.fine.nodes[wp_id]
                    agent = self._make_agent(aid, emb, wp, spec)
                    if not self.world.collides_any(
                            self.world.agent_footprint(agent), exclude=aid):
                        break
                    tries += 1
                    if tries > len(pool):
                        raise ScenarioInvalidError("no free spawn slot")
                auto_cursor += 1
            else:
                if wp_id not in self.world.fine.nodes:
                    raise ScenarioInvalidError(f"unknown spawn waypoint {wp_id}")
                wp = self.world.fine.nodes[wp_id]
                agent = self._make_agent(aid, emb, wp, spec)
            self.world.agents[aid] = agent

    @staticmethod
    def _make_agent(aid: str, emb: Embodiment, wp, spec: dict) -> AgentState:
        vitals = spec.get("vitals", {})
        return AgentState(
            id=aid, embodiment=emb,
            pose=Pose2D(wp.x, wp.y, spec.get("yaw", 0.0)),
            energy=vitals.get("energy", 100.0),
            money_cents=round(vitals.get("money", 0.0) * 100),
        )

    # ------------------------------------------------------------- observe

    def observe(self, agent_id: str) -> Observation:
        agent = self._agent(agent_id)
        snapshot = self._snapshot_near(agent)
        messages, agent.inbox = agent.inbox, []
        return Observation(agent.pose, self.world.tick, snapshot, messages,
                           agent.last_feedback, self.raster_cfg)

    def _snapshot_near(self, agent: AgentState) -> list:
        cfg = self.raster_cfg
        half_diag = math.sqrt((cfg.height * cfg.cell) ** 2 +
                              (cfg.width * cfg.cell) ** 2) / 2.0
        radius = max(cfg.view_radius, half_diag)
        items = []
        for e in self.world.scene.entities_in_radius(agent.pose.x, agent.pose.y,
                                                     radius):
            items.append(_snapshot_item(e.id, e.category, e.pose, e.footprint,
                                        sorted(e.tags)))
        for oid, fp in self.world.dynamic_footprints(exclude=agent.id):
            if fp.min_dist_to_point(agent.pose.x, agent.pose.y) > radius:
                continue
            if oid in self.world.vehicles:
                cat, pose = Category.VEHICLE, self.world.vehicles[oid].pose
            elif oid in self.world.pedestrians:
                cat, pose = Category.PEDESTRIAN, self.world.pedestrians[oid].pose
            else:
                other = self.world.agents[oid]
                cat = (Category.VEHICLE if other.embodiment is Embodiment.VEHICLE
                       else Category(other.embodiment.value))
                pose = other.pose
            items.append(_snapshot_item(oid, cat, pose, fp, []))
        items.sort(key=lambda s: s["id"])
        return items

    # ---------------------------------------------------------------- step

    def _agent(self, agent_id: str) -> AgentState:
        agent = self.world.agents.get(agent_id)
        if agent is None:
            raise UnknownAgentError(f"no agent {agent_id!r}")
        return agent

    def step_sync(self, actions: dict) -> tuple:
        """Execute one action per agent (ascending id), then a traffic tick."""
        self.advance(actions)
        observations = {aid: self.observe(aid) for aid in sorted(self.world.agents)}
        delta = self.world.events.since(self._event_cursor)
        self._event_cursor = len(self.world.events)
        return observations, delta

    def advance(self, actions: dict) -> None:
        """step_sync without observation assembly, for scripted drivers that
        read the world directly."""
        for aid in actions:
            self._agent(aid)
        self._advance_tick(actions)

    def _advance_tick(self, actions: dict) -> None:
        self.world.tick += 1
        for aid in sorted(self.world.agents):
            cmd = actions.get(aid)
            if cmd is None:
                cmd = ActionCommand(aid, "do_nothing")
            elif cmd.agent_id != aid:
                cmd = ActionCommand(aid, cmd.verb, cmd.args)
            agent = self.world.agents[aid]
            agent.last_feedback = self.execute_primitive(cmd)
        for aid in sorted(self.world.agents):
            agent = self.world.agents[aid]
            if agent.embodiment is Embodiment.VEHICLE or agent.in_vehicle:
                self._integrate_agent_vehicle(agent)
        step_traffic(self.world, self.world.dt,
                     getattr(self.world, "traffic_cfg", None))
        for hook in self.tick_hooks:
            hook(self.world)

    # --------------------------------------------------------- primitives

    def execute_primitive(self, cmd: ActionCommand) -> Feedback:
        """Apply one primitive; semantic failures become invalid feedback."""
        if cmd.verb in self.extra_verbs:
            agent = self._agent(cmd.agent_id)
            return self.extra_verbs[cmd.verb](agent, cmd.args)
        _validate_params(cmd)
        agent = self._agent(cmd.agent_id)
        if cmd.verb not in legal_verbs(agent):
            return Feedback(cmd.verb, "invalid", reason="wrong_embodiment")
        handler = getattr(self, f"_verb_{cmd.verb}", None)
        if handler is None:
            raise MalformedActionError(f"unhandled verb {cmd.verb!r}")
        return handler(agent, cmd.args)

    # movement ---------------------------------------------------------

    def _try_move(self, agent: AgentState, dx: float, dy: float,
                  verb: str) -> Feedback:
        old = agent.pose
        new = Pose2D(old.x + dx, old.y + dy, old.yaw)
        agent.pose = new
        fp = self.world.agent_footprint(agent)
        agent.pose = old
        hit = self.world.first_obstruction(fp, exclude=agent.id)
        if hit is not None:
            hit_id, hit_cat = hit
            kind = ("collision_dynamic"
                    if hit_cat in (Category.VEHICLE, Category.PEDESTRIAN,
                                   Category.ROBOT, Category.HUMANOID)
                    else "collision_static")
            self.world.events.append(Event(self.world.tick, agent.id, kind,
                                           {"hit": hit_id,
                                            "category": hit_cat.value}))
            return Feedback(verb, "blocked", collision=hit_cat.value)
        agent.pose = new
        violation = self.world.red_crosswalk_entered(old, new)
        fb = Feedback(verb, "ok")
        if violation is not None:
            fb.signal_violation = True
            self.world.events.append(Event(self.world.tick, agent.id,
                                           "red_light_violation",
                                           {"signal": violation}))
        return fb

    def _verb_step_forward(self, agent, args):
        step = args.get("distance", agent.step_length(self.world.dt))
        return self._try_move(agent, math.cos(agent.pose.yaw) * step,
                              math.sin(agent.pose.yaw) * step, "step_forward")

    def _verb_step_backward(self, agent, args):
        step = agent.step_length(self.world.dt)
        return self._try_move(agent, -math.cos(agent.pose.yaw) * step,
                              -math.sin(agent.pose.yaw) * step, "step_backward")

    def _verb_move_left(self, agent, args):
        step = agent.step_length(self.world.dt)
        yaw = agent.pose.yaw + math.pi / 2.0
        return self._try_move(agent, math.cos(yaw) * step,
                              math.sin(yaw) * step, "move_left")

    def _verb_move_right(self, agent, args):
        step = agent.step_length(self.world.dt)
        yaw = agent.pose.yaw - math.pi / 2.0
        return self._try_move(agent, math.cos(yaw) * step,
                              math.sin(yaw) * step, "move_right")

    def _verb_rotate(self, agent, args):
        agent.pose = agent.pose.rotated(args.get("theta", 0.0))
        return Feedback("rotate", "ok")

    def _verb_stop(self, agent, args):
        agent.controls = {"throttle": 0.0, "brake": 0.0, "steering": 0.5}
        agent.vehicle_speed = 0.0
        return Feedback("stop", "ok")

    # vehicle controls -------------------------------------------------

    def _verb_throttle(self, agent, args):
        agent.controls["throttle"] = float(args["u"])
        agent.controls["brake"] = 0.0
        return Feedback("throttle", "ok")

    def _verb_brake(self, agent, args):
        agent.controls["brake"] = float(args["u"])
        agent.controls["throttle"] = 0.0
        return Feedback("brake", "ok")

    def _verb_steering(self, agent, args):
        agent.controls["steering"] = float(args["u"])
        return Feedback("steering", "ok")

    def _integrate_agent_vehicle(self, agent: AgentState) -> None:
        """Kinematic bicycle update from the current control inputs."""
        dt = self.world.dt
        accel = (agent.controls["throttle"] * VEHICLE_ACCEL
                 - agent.controls["brake"] * VEHICLE_BRAKE)
        agent.vehicle_speed = min(VEHICLE_VMAX,
                                  max(0.0, agent.vehicle_speed + accel * dt))
        if agent.vehicle_speed <= 0.0:
            return
        delta = (agent.controls["steering"] * 2.0 - 1.0) * MAX_STEER
        yaw = normalize_angle(agent.pose.yaw
                              + agent.vehicle_speed / WHEELBASE
                              * math.tan(delta) * dt)
        dist = agent.vehicle_speed * dt
        old = agent.pose
        agent.pose = Pose2D(old.x, old.y, yaw)
        fb = self._try_move(agent, math.cos(yaw) * dist, math.sin(yaw) * dist,
                            "vehicle_motion")
        if fb.outcome == "blocked":
            agent.vehicle_speed = 0.0
            agent.pose = Pose2D(old.x, old.y, yaw)

    # interactions -----------------------------------------------------

    def _find_target(self, args) -> Optional[SceneEntity]:
        tid = args.get("id")
        if tid is None:
            return None
        return self.world.scene.entity_index.get(tid)

    def _in_range(self, agent, entity: SceneEntity) -> bool:
        return entity.footprint.min_dist_to_point(
            agent.pose.x, agent.pose.y) <= INTERACT_RANGE

    def _verb_pick_up(self, agent, args):
        target = self._find_target(args)
        if target is None or target.category not in (
                Category.URBAN_PROP, Category.GENERATED_ASSET):
            return Feedback("pick_up", "invalid", reason="invalid_target")
        if not self._in_range(agent, target):
            return Feedback("pick_up", "invalid", reason="out_of_range")
        if max(target.footprint.width, target.footprint.height) > 1.0:
            return Feedback("pick_up", "invalid", reason="too_heavy")
        self.world.scene.remove(target.id)
        agent.inventory.append({"kind": "item", "name": target.id,
                                "entity": target})
        return Feedback("pick_up", "ok")

    def _verb_carry(self, agent, args):
        target = self._find_target(args)
        if target is None or target.category not in (
                Category.URBAN_PROP, Category.GENERATED_ASSET):
            return Feedback("carry", "invalid", reason="invalid_target")
        if not self._in_range(agent, target):
            return Feedback("carry", "invalid", reason="out_of_range")
        self.world.scene.remove(target.id)
        agent.inventory.append({"kind": "heavy", "name": target.id,
                                "entity": target})
        agent.carrying = True
        return Feedback("carry", "ok")

    def _place_held(self, agent, kind: str, verb: str) -> Feedback:
        idx = next((i for i, item in enumerate(agent.inventory)
                    if item["kind"] == kind), None)
        if idx is None:
            return Feedback(verb, "invalid", reason="nothing_held")
        entity: SceneEntity = agent.inventory[idx]["entity"]
        ahead = agent.pose.forward(INTERACT_RANGE / 2.0 +
                                   max(entity.footprint.width,
                                       entity.footprint.height) / 2.0)
        fp = AABB.from_center(ahead.x, ahead.y, entity.footprint.width,
                              entity.footprint.height)
        if self.world.collides_any(fp, exclude=agent.id):
            return Feedback(verb, "blocked")
        from dataclasses import replace
        self.world.scene.insert(replace(entity, footprint=fp,
                                        pose=Pose2D(ahead.x, ahead.y)))
        agent.inventory.pop(idx)
        if kind == "heavy":
            agent.carrying = any(i["kind"] == "heavy" for i in agent.inventory)
        return Feedback(verb, "ok")

    def _verb_drop(self, agent, args):
        return self._place_held(agent, "item", "drop")

    def _verb_put_down(self, agent, args):
        return self._place_held(agent, "heavy", "put_down")

    def _verb_sit_down(self, agent, args):
        if agent.riding_scooter:
            return Feedback("sit_down", "invalid", reason="riding")
        near = self.world.scene.entities_in_radius(
            agent.pose.x, agent.pose.y, INTERACT_RANGE)
        if not any("sittable" in e.tags for e in near):
            return Feedback("sit_down", "invalid", reason="no_seat")
        agent.seated = True
        return Feedback("sit_down", "ok")

    def _verb_stand_up(self, agent, args):
        agent.seated = False
        return Feedback("stand_up", "ok")

    def _verb_open_door(self, agent, args):
        target = self._find_target(args)
        if target is None or "door" not in target.tags:
            return Feedback("open_door", "invalid", reason="invalid_target")
        if not self._in_range(agent, target):
            return Feedback("open_door", "invalid", reason="out_of_range")
        return Feedback("open_door", "ok")

    def _verb_enter_car(self, agent, args):
        target = self._find_target(args)
        ok = target is not None and (
            target.category is Category.VEHICLE or "parked_vehicle" in target.tags)
        if not ok:
            return Feedback("enter_car", "invalid", reason="invalid_target")
        if not self._in_range(agent, target):
            return Feedback("enter_car", "invalid", reason="out_of_range")
        agent.in_vehicle = True
        agent.vehicle_ref = target.id
        agent.pose = Pose2D(*target.footprint.center, agent.pose.yaw)
        agent.vehicle_speed = 0.0
        return Feedback("enter_car", "ok")

    def _verb_exit_car(self, agent, args):
        if not agent.in_vehicle:
            return Feedback("exit_car", "invalid", reason="not_in_vehicle")
        agent.in_vehicle = False
        agent.vehicle_ref = None
        agent.vehicle_speed = 0.0
        # step out sideways: first free offset around the current pose
        for ang in (math.pi / 2.0, -math.pi / 2.0, math.pi, 0.0):
            yaw = agent.pose.yaw + ang
            cand = Pose2D(agent.pose.x + math.cos(yaw) * 2.0,
                          agent.pose.y + math.sin(yaw) * 2.0, agent.pose.yaw)
            old = agent.pose
            agent.pose = cand
            if not self.world.collides_any(self.world.agent_footprint(agent),
                                           exclude=agent.id):
                return Feedback("exit_car", "ok")
            agent.pose = old
        return Feedback("exit_car", "blocked")

    def _verb_ride_scooter(self, agent, args):
        if agent.seated:
            return Feedback("ride_scooter", "invalid", reason="seated")
        if not any(i.get("name") == "scooter" for i in agent.inventory):
            return Feedback("ride_scooter", "invalid", reason="no_scooter")
        agent.riding_scooter = True
        return Feedback("ride_scooter", "ok")

    # observation & social ---------------------------------------------

    def _verb_look_up(self, agent, args):
        agent.gaze = 1
        return Feedback("look_up", "ok")

    def _verb_look_down(self, agent, args):
        agent.gaze = -1
        return Feedback("look_down", "ok")

    def _verb_focus(self, agent, args):
        fov = args.get("fov", math.pi / 2.0)
        if not isinstance(fov, (int, float)) or not (0.1 <= fov <= math.pi):
            return Feedback("focus", "invalid", reason="out_of_range")
        agent.fov = float(fov)
        return Feedback("focus", "ok")

    def _verb_take_photo(self, agent, args):
        obs = Observation(agent.pose, self.world.tick,
                          self._snapshot_near(agent), [], None,
                          self.raster_cfg)
        return Feedback("take_photo", "ok", data={"raster": obs.local_raster})

    def _verb_converse(self, agent, args):
        text = str(args.get("text", ""))
        heard = []
        for aid in sorted(self.world.agents):
            other = self.world.agents[aid]
            if aid != agent.id and dist2d(agent.pose.x, agent.pose.y,
                                          other.pose.x, other.pose.y) <= CONVERSE_RANGE:
                other.inbox.append({"from": agent.id, "text": text})
                heard.append(aid)
        self.world.events.append(Event(self.world.tick, agent.id, "message",
                                       {"text": text, "heard_by": heard}))
        return Feedback("converse", "ok", data={"heard_by": heard})

    def _verb_point_direction(self, agent, args):
        self.world.events.append(Event(self.world.tick, agent.id, "message",
                                       {"gesture": "point",
                                        "theta": args.get("theta", 0.0)}))
        return Feedback("point_direction", "ok")

    def _verb_wave_hand(self, agent, args):
        self.world.events.append(Event(self.world.tick, agent.id, "message",
                                       {"gesture": "wave"}))
        return Feedback("wave_hand", "ok")

    def _verb_argue(self, agent, args):
        self.world.events.append(Event(self.world.tick, agent.id, "message",
                                       {"gesture": "argue"}))
        return Feedback("argue", "ok")

    def _verb_send_message(self, agent, args):
        to = args["to"]
        if to not in self.world.agents:
            return Feedback("send_message", "invalid", reason="invalid_target")
        self.world.agents[to].inbox.append({"from": agent.id,
                                            "text": str(args["text"])})
        self.world.events.append(Event(self.world.tick, agent.id, "message",
                                       {"to": to, "text": str(args["text"])}))
        return Feedback("send_message", "ok")

    def _verb_do_nothing(self, agent, args):
        return Feedback("do_nothing", "ok")

    def _verb_evaluate(self, agent, args):
        if self.evaluator is None:
            return Feedback("evaluate", "invalid", reason="no_task")
        ok, info = self.evaluator(self.world, agent)
        return Feedback("evaluate", "ok" if ok else "invalid",
                        reason=None if ok else "evaluate_failed", data=info)


def _snapshot_item(eid, category, pose, footprint, tags) -> dict:
    return {
        "id": eid,
        "category": category.value,
        "pose": [pose.x, pose.y, pose.yaw],
        "footprint": [footprint.min_x, footprint.min_y,
                      footprint.max_x, footprint.max_y],
        "tags": list(tags),
    }


# ------------------------------------------------------------------ async

class ActionBuffer:
    """At most one pending action per available agent; thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: dict = {}
        self._busy_until: dict = {}

    def submit(self, tick: int, cmd: ActionCommand) -> None:
        with self._lock:
            if self._busy_until.get(cmd.agent_id, -1) > tick:
                raise BusyError(f"{cmd.agent_id} is busy")
            if cmd.agent_id in self._pending:
                raise BusyError(f"{cmd.agent_id} already has a pending action")
            self._pending[cmd.agent_id] = cmd

    def available(self, tick: int, agent_id: str) -> bool:
        with self._lock:
            return (self._busy_until.get(agent_id, -1) <= tick
                    and agent_id not in self._pending)

    def drain(self, tick: int, duration_ticks: int = 1) -> dict:
        with self._lock:
            actions, self._pending = self._pending, {}
            for aid in actions:
                self._busy_until[aid] = tick + duration_ticks
            return actions


def run_async(env: Environment, action_source: Callable,
              duration: float, interval: Optional[float] = None) -> tuple:
    """Simulated-clock asynchronous loop.

    `action_source(agent_id, observation, tick)` returns an ActionCommand
    or None; it is polled only for available agents. Each interval the
    buffer drains, valid actions execute with one traffic tick, and acting
    agents become unavailable for their action's duration (one tick here).
    """
    interval = env.interval if interval is None else interval
    buffer = ActionBuffer()
    ticks = round(duration / interval)
    observations = {aid: env.observe(aid) for aid in sorted(env.world.agents)}
    for _ in range(ticks):
        tick = env.world.tick
        for aid in sorted(env.world.agents):
            if not buffer.available(tick, aid):
                continue
            cmd = action_source(aid, observations.get(aid), tick)
            if cmd is not None:
                buffer.submit(tick, cmd)
        actions = buffer.drain(tick)
        env._advance_tick(actions)
        observations = {aid: env.observe(aid) for aid in sorted(env.world.agents)}
    delta = env.world.events.since(0)
    return env.world, delta
