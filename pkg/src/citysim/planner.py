"""Two-component action planner: a pattern parser from command text to
high-level steps, and a rule-based executor that expands navigation through
A* into primitive actions. An external-executor hook lets a remote party
(the protocol's analog of a VLM policy) pick primitives instead.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    EndpointUnavailableError,
    NoPathError,
    NotFoundError,
    TargetNotFoundError,
    UnparseableClauseError,
)
from .geometry import AABB, dist2d, normalize_angle
from .scene import Category
from .waypoints import PEDESTRIAN_KINDS, WaypointKind, astar, path_length


# ----------------------------------------------------------------- parsing

# noun -> (category, tag) for <target> resolution
NOUN_TABLE = {
    "chair": (Category.URBAN_PROP, "chair"),
    "bench": (Category.URBAN_PROP, "bench"),
    "seat": (Category.URBAN_PROP, "sittable"),
    "tree": (Category.VEGETATION, "tree"),
    "bin": (Category.URBAN_PROP, "bin"),
    "trash bin": (Category.URBAN_PROP, "bin"),
    "cone": (Category.URBAN_PROP, "cone"),
    "car": (Category.URBAN_PROP, "parked_vehicle"),
    "building": (Category.BUILDING, None),
    "house": (Category.BUILDING, "house"),
    "restaurant": (Category.BUILDING, "restaurant"),
    "hospital": (Category.BUILDING, "hospital"),
    "museum": (Category.BUILDING, "museum"),
    "shop": (Category.BUILDING, "shop"),
    "office": (Category.BUILDING, "office"),
    "landmark": (Category.BUILDING, "landmark"),
}

_ID_RE = re.compile(r"^[a-z]+_\d+$")


def _target_spec(noun: str, nearest: bool) -> dict:
    noun = noun.strip()
    if _ID_RE.match(noun):
        return {"qualifier": "id", "id": noun}
    if noun in NOUN_TABLE:
        cat, tag = NOUN_TABLE[noun]
        return {"qualifier": "nearest", "category": cat.value, "tag": tag}
    raise UnparseableClauseError(noun)


def _nav(noun: str, nearest: str) -> list:
    return [{"verb": "navigate", "args": {"target": _target_spec(noun, bool(nearest))}}]


def _nav_then(extra_verb: str):
    def build(noun, nearest):
        return _nav(noun, nearest) + [{"verb": extra_verb, "args": {}}]
    return build


def _plain(verb: str):
    def build(*groups):
        return [{"verb": verb, "args": {}}]
    return build


# (pattern, builder(groups...) -> [steps]) tried in order per clause
DEFAULT_VOCABULARY = [
    (re.compile(r"^(?:go|walk|navigate) to (?:the )?(nearest )?(.+)$"),
     lambda near, noun: _nav(noun, near)),
    (re.compile(r"^sit on (?:the )?(nearest )?(.+)$"),
     lambda near, noun: _nav(noun, near) + [{"verb": "sit_down", "args": {}}]),
    (re.compile(r"^sit down$"), _plain("sit_down")),
    (re.compile(r"^stand up$"), _plain("stand_up")),
    (re.compile(r"^pick up (?:the )?(nearest )?(.+)$"),
     lambda near, noun: _nav(noun, near) + [{"verb": "pick_up", "args": {}}]),
    (re.compile(r"^(?:drop|put it down)$"), _plain("drop")),
    (re.compile(r"^put down$"), _plain("put_down")),
    (re.compile(r"^enter (?:the )?(nearest )?(.+)$"),
     lambda near, noun: _nav(noun, near) + [{"verb": "enter_car", "args": {}}]),
    (re.compile(r"^exit (?:the )?car$"), _plain("exit_car")),
    (re.compile(r"^wave$"), _plain("wave_hand")),
    (re.compile(r"^stop$"), _plain("stop")),
    (re.compile(r"^look up$"), _plain("look_up")),
    (re.compile(r"^look down$"), _plain("look_down")),
    (re.compile(r"^take (?:a )?photo$"), _plain("take_photo")),
    (re.compile(r"^(?:do nothing|wait)$"), _plain("do_nothing")),
    (re.compile(r"^deliver (?:the )?order(?: (\S+))?$"),
     lambda oid: [{"verb": "deliver_order",
                   "args": ({"order": oid} if oid else {})}]),
]


@dataclass
class HighLevelPlan:
    steps: list
    source_text: str = ""

    @staticmethod
    def from_dict(doc: dict) -> "HighLevelPlan":
        steps = [{"verb": s["verb"], "args": dict(s.get("args", {}))}
                 for s in doc.get("steps", [])]
        if not steps:
            raise UnparseableClauseError("<empty plan>")
        return HighLevelPlan(steps, doc.get("source_text", ""))

    def to_dict(self) -> dict:
        return {"steps": self.steps, "source_text": self.source_text}


def parse(command: str, vocabulary=None) -> HighLevelPlan:
    """Deterministic grammar: split on and/then, match each clause against
    the pattern table. No statistical NLP; unknown fragments raise."""
    if not command or not command.strip():
        raise UnparseableClauseError("<empty command>")
    vocabulary = DEFAULT_VOCABULARY if vocabulary is None else vocabulary
    text = command.strip().lower().rstrip(".!")
    clauses = re.split(r"\s*(?:,\s*)?\b(?:and then|and|then)\b\s*", text)
    steps: list = []
    for clause in clauses:
        clause = clause.strip()
        if not clause:
            continue
        for pattern, builder in vocabulary:
            m = pattern.match(clause)
            if m:
                steps.extend(builder(*m.groups()))
                break
        else:
            raise UnparseableClauseError(clause)
    if not steps:
        raise UnparseableClauseError(command)
    return HighLevelPlan(steps, source_text=command)


# --------------------------------------------------------------- programs

ARRIVE_TOL = 1e-6
YAW_TOL = 1e-9
REPLAN_PENALTY = 10.0
REPLAN_BUDGET = 2


@dataclass
class Hop:
    frm: str
    to: str


@dataclass
class PlanProgram:
    agent_id: str
    queue: list = field(default_factory=list)  # Hop | ActionCommand dicts
    status: str = "running"                    # running | done | failed:<reason>
    hops: list = field(default_factory=list)   # all compiled hops, for audit
    compiled_cost: float = 0.0
    goal_waypoint: Optional[str] = None
    mode: str = "pedestrian"
    external: Optional[Callable] = None
    external_timeout: int = 10
    _silent_ticks: int = 0
    _consecutive_replans: int = 0
    _penalties: dict = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.status == "done"

    @property
    def failed(self) -> bool:
        return self.status.startswith("failed")


def _nearest_waypoint(world, pose, mode: str):
    kinds = ({WaypointKind.ROAD_LANE} if mode == "vehicle"
             else set(PEDESTRIAN_KINDS))
    return world.fine.nearest_node(pose.x, pose.y, kinds=kinds)


def free_waypoint_near(world, x: float, y: float, kinds: set,
                       body_w: float = 0.5, body_h: float = 0.5):
    """Nearest waypoint whose slot is not statically occupied (street props
    sit exactly on lattice nodes, so the closest node may be inside one)."""
    candidates = world.fine.nearest_nodes(x, y, kinds=kinds, k=12)
    for wp in candidates:
        slot = AABB(wp.x - body_w / 2.0, wp.y - body_h / 2.0,
                    wp.x + body_w / 2.0, wp.y + body_h / 2.0)
        if not world.scene.collides(slot):
            return wp
    if candidates:
        return candidates[0]
    return world.fine.nearest_node(x, y, kinds=kinds)


def _nearest_reachable_waypoint(world, agent, mode: str):
    """Closest waypoint the agent can walk straight to without clipping a
    static blocker; falls back to plain nearest if none of the closest
    candidates has a clear line."""
    kinds = ({WaypointKind.ROAD_LANE} if mode == "vehicle"
             else set(PEDESTRIAN_KINDS))
    pose = agent.pose
    candidates = world.fine.nearest_nodes(pose.x, pose.y, kinds=kinds, k=12)
    body = world.agent_footprint(agent)
    half_w = body.width / 2.0
    half_h = body.height / 2.0
    for wp in candidates:
        length = dist2d(pose.x, pose.y, wp.x, wp.y)
        steps = max(1, int(length / 0.35))
        clear = True
        for s in range(1, steps + 1):
            t = s / steps
            px = pose.x + (wp.x - pose.x) * t
            py = pose.y + (wp.y - pose.y) * t
            if world.scene.collides(AABB(px - half_w, py - half_h,
                                         px + half_w, py + half_h)):
                clear = False
                break
        if clear:
            return wp
    return candidates[0] if candidates else _nearest_waypoint(world, pose, mode)


def _resolve_target(world, agent, spec: dict):
    if spec.get("qualifier") == "id" or "id" in spec:
        entity = world.scene.entity_index.get(spec["id"])
        if entity is None:
            raise TargetNotFoundError(f"no entity {spec['id']}")
        return entity
    try:
        return world.scene.nearest(agent.pose, Category(spec["category"]),
                                   spec.get("tag"))
    except NotFoundError as exc:
        raise TargetNotFoundError(str(exc)) from exc


# delivery and interaction verbs appended verbatim after navigation
_TERMINAL_VERBS = {
    "sit_down", "stand_up", "pick_up", "drop", "put_down", "enter_car",
    "exit_car", "wave_hand", "stop", "look_up", "look_down", "take_photo",
    "do_nothing", "ride_scooter",
    "pick_up_order", "deliver_order", "share_order", "cancel_share",
    "purchase_scooter", "purchase_drinks", "adjust_speed", "evaluate",
}


def compile_route(world, agent, start_id: str, goal_id: str, mode: str,
                  penalties: Optional[dict] = None) -> list:
    """A* route that iteratively routes around statically occupied nodes.

    Street props sit exactly on lattice waypoints; any such node found on
    the path gets the replan penalty and the search reruns, so compiled
    routes only cross occupied slots when no alternative exists.
    """
    penalties = penalties if penalties is not None else {}
    body = world.agent_footprint(agent)
    half_w = body.width / 2.0
    half_h = body.height / 2.0
    path = astar(world.fine, start_id, goal_id, mode=mode,
                 node_penalty=penalties or None)
    for _ in range(5):
        occupied = []
        for wid in path[:-1]:  # the goal slot is pre-checked by the caller
            if penalties.get(wid):
                continue
            wp = world.fine.nodes[wid]
            slot = AABB(wp.x - half_w, wp.y - half_h,
                        wp.x + half_w, wp.y + half_h)
            if world.scene.collides(slot):
                occupied.append(wid)
        if not occupied:
            break
        for wid in occupied:
            penalties[wid] = REPLAN_PENALTY
        path = astar(world.fine, start_id, goal_id, mode=mode,
                     node_penalty=penalties)
    return path


def expand_rule_based(plan: HighLevelPlan, world, agent) -> PlanProgram:
    """Compile high-level steps into waypoint hops plus terminal primitives.

    navigate(target) becomes the A* chain from the agent's nearest waypoint
    to the target's nearest waypoint; the terminal (w, w) hop marks arrival,
    mirroring the hop notation navigate(i, j).
    """
    mode = "vehicle" if agent.embodiment.value == "vehicle" else "pedestrian"
    program = PlanProgram(agent_id=agent.id, mode=mode)
    pose = agent.pose
    target_args: dict = {}
    for step in plan.steps:
        verb = step["verb"]
        if verb == "navigate":
            entity = _resolve_target(world, agent, step["args"]["target"])
            tx, ty = entity.footprint.center
            kinds = ({WaypointKind.ROAD_LANE} if mode == "vehicle"
                     else set(PEDESTRIAN_KINDS))
            body = world.agent_footprint(agent)
            goal_wp = free_waypoint_near(world, tx, ty, kinds,
                                         body.width, body.height)
            if (pose.x, pose.y) == (agent.pose.x, agent.pose.y):
                start_wp = _nearest_reachable_waypoint(world, agent, mode)
            else:
                start_wp = _nearest_waypoint(world, pose, mode)
            # the compiled route deliberately omits obstacle information;
            # the executor handles local avoidance when blocked
            path = astar(world.fine, start_wp.id, goal_wp.id, mode=mode)
            hops = [Hop(a, b) for a, b in zip(path, path[1:])]
            hops.append(Hop(path[-1], path[-1]))
            program.queue.extend(hops)
            program.hops.extend((h.frm, h.to) for h in hops)
            program.compiled_cost += path_length(world.fine, path)
            program.goal_waypoint = goal_wp.id
            target_args = {"id": entity.id}
            end = world.fine.nodes[path[-1]]
            pose = type(pose)(end.x, end.y, pose.yaw)
        elif verb in _TERMINAL_VERBS:
            args = dict(step.get("args", {}))
            if verb in ("pick_up", "enter_car", "open_door") and "id" not in args:
                args.update(target_args)
            program.queue.append({"verb": verb, "args": args})
        else:
            raise UnparseableClauseError(verb)
    if not program.queue:
        program.status = "done"
    return program


def _make_action(agent_id: str, verb: str, args: dict):
    from .env import ActionCommand
    return ActionCommand(agent_id, verb, args)


def tick_executor(program: PlanProgram, world, agent):
    """Emit the next primitive, or advance/terminate the program.

    Blocked feedback triggers one replan of the remaining leg with the
    blocking cell's waypoints penalized 10x; a second consecutive blocked
    replan fails the program as stuck.
    """
    if program.status != "running":
        return None
    if program.external is not None:
        return _tick_external(program, world, agent)

    feedback = agent.last_feedback
    if (feedback is not None and feedback.outcome == "blocked"
            and program.queue and isinstance(program.queue[0], Hop)):
        dynamic = feedback.collision in ("humanoid", "robot", "vehicle",
                                         "pedestrian")
        if not _replan(program, world, agent, dynamic):
            return None
    elif (feedback is not None and feedback.outcome == "ok"
          and feedback.verb == "step_forward"):
        # only forward progress clears the stuck counter; rotations do not
        program._consecutive_replans = 0

    while program.queue:
        item = program.queue[0]
        if isinstance(item, Hop):
            wp = world.fine.nodes[item.to]
            dx = wp.x - agent.pose.x
            dy = wp.y - agent.pose.y
            remaining = math.sqrt(dx * dx + dy * dy)
            if remaining <= ARRIVE_TOL:
                program.queue.pop(0)
                continue
            desired = math.atan2(dy, dx)
            dyaw = normalize_angle(desired - agent.pose.yaw)
            if abs(dyaw) > YAW_TOL:
                return _make_action(agent.id, "rotate", {"theta": dyaw})
            step = min(agent.step_length(world.dt), remaining)
            return _make_action(agent.id, "step_forward", {"distance": step})
        program.queue.pop(0)
        return _make_action(agent.id, item["verb"], item["args"])
    program.status = "done"
    return None


def _replan(program: PlanProgram, world, agent, dynamic: bool = True) -> bool:
    if program._consecutive_replans >= REPLAN_BUDGET:
        program.status = "failed:stuck"
        return False
    program._consecutive_replans += 1
    # Penalize the blocked cell's waypoints: the hop target plus any of its
    # graph neighbors within one stride of the attempted step. Neighbors on
    # the agent's left are penalized as well, so oncoming agents detour to
    # their respective right and pass instead of mirror-blocking forever.
    probe = agent.pose.forward(agent.step_length(world.dt))
    hop = program.queue[0]
    candidates = {hop.to, hop.frm}
    for nid, _ in world.fine.arcs(hop.to, 3):
        candidates.add(nid)
    program._penalties[hop.to] = REPLAN_PENALTY
    hx = math.cos(agent.pose.yaw)
    hy = math.sin(agent.pose.yaw)
    target = world.fine.nodes[hop.to]
    for wid in sorted(candidates):
        wp = world.fine.nodes[wid]
        if dist2d(probe.x, probe.y, wp.x, wp.y) <= 1.0:
            program._penalties[wid] = REPLAN_PENALTY
        elif dynamic and dist2d(target.x, target.y, wp.x, wp.y) <= 1.2:
            cross = hx * (wp.y - agent.pose.y) - hy * (wp.x - agent.pose.x)
            if cross > 1e-9:  # keep right so oncoming agents pass
                program._penalties[wid] = REPLAN_PENALTY
    if program.goal_waypoint is None:
        program.status = "failed:stuck"
        return False
    start = _nearest_reachable_waypoint(world, agent, program.mode)
    try:
        path = compile_route(world, agent, start.id, program.goal_waypoint,
                             program.mode, program._penalties)
    except NoPathError:
        program.status = "failed:stuck"
        return False
    tail = [item for item in program.queue if not isinstance(item, Hop)]
    hops = [Hop(a, b) for a, b in zip(path, path[1:])]
    hops.append(Hop(path[-1], path[-1]))
    program.queue = hops + tail
    return True


def attach_external_executor(program: PlanProgram, endpoint: Callable,
                             timeout_ticks: int = 10) -> PlanProgram:
    """Defer primitive choice to an external party (observation -> action)."""
    if endpoint is None:
        raise EndpointUnavailableError("no endpoint provided")
    program.external = endpoint
    program.external_timeout = timeout_ticks
    return program


def _tick_external(program: PlanProgram, world, agent):
    try:
        choice = program.external(agent)
    except Exception:
        choice = None
    if choice is None:
        program._silent_ticks += 1
        if program._silent_ticks >= program.external_timeout:
            program.status = "failed:executor_timeout"
        return None
    program._silent_ticks = 0
    verb = getattr(choice, "verb", None)
    if verb == "__done__":
        program.status = "done"
        return None
    return choice
