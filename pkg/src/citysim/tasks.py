"""Procedural task suites (physical navigation, multimodal decomposition,
two-robot search) and the episode metric formulas computed from records.

Every metric is a pure function of EpisodeRecords, so recomputation from
raw event logs always matches the incremental bookkeeping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Optional

from .errors import InfeasibleMapError, NoPathError
from .geometry import dist2d, manhattan, normalize_angle
from .scene import Category
from .waypoints import WaypointKind, astar

GOAL_RANGE = 3.0                 # "stops near" radius, meters
GOAL_YAW_TOL = math.radians(30)  # "oriented towards it"
SEARCH_SEE_RANGE = 20.0          # raster visibility stand-in
STUCK_WINDOW_S = 120.0           # two simulated minutes
STUCK_DISPLACEMENT = 1.0


@dataclass
class NavTask:
    id: str
    difficulty: str              # easy | medium | hard | dynamic
    route: list                  # waypoint ids, astar-valid
    start: str
    goal: str
    time_limit: int              # ticks
    subtasks: Optional[list] = None

    def to_dict(self) -> dict:
        return {"id": self.id, "difficulty": self.difficulty,
                "route": self.route, "start": self.start, "goal": self.goal,
                "time_limit": self.time_limit,
                "subtasks": ([asdict(s) for s in self.subtasks]
                             if self.subtasks else None)}


@dataclass
class SubTask:
    kind: str        # orientation_alignment | move_along_road |
                     # turning_at_intersection | reach_destination
    goal_waypoint: str
    goal_yaw: float
    instruction: str
    landmark: Optional[str] = None


@dataclass
class EpisodeRecord:
    task_id: str
    success: bool
    subtasks_total: int = 0
    subtasks_completed: int = 0
    d0: float = 0.0              # Manhattan agent->goal at start
    dT: float = 0.0              # ... at termination
    D0: float = 0.0              # Manhattan inter-agent (search)
    DT: float = 0.0
    collisions_static: int = 0
    collisions_dynamic: int = 0
    red_light: int = 0
    decisions: int = 0
    fine_waypoints: int = 1
    stuck: bool = False
    ticks_used: int = 0

    def __post_init__(self):
        if self.subtasks_completed > self.subtasks_total:
            raise ValueError("n_c must not exceed N")
        if min(self.d0, self.dT, self.D0, self.DT) < 0:
            raise ValueError("distances must be non-negative")


# ------------------------------------------------------------- generation

_SEGMENT_BOUNDS = {"easy": (1, 2), "medium": (3, 4), "hard": (5, 10_000),
                   "dynamic": (3, 4)}
_TIME_LIMITS_S = {"easy": 900, "medium": 900, "hard": 1500, "dynamic": 900}


def _route_segment_count(graph, route: list) -> int:
    segs = set()
    for wid in route:
        seg = graph.nodes[wid].segment_id
        if seg is not None:
            segs.add(seg)
    return len(segs)


def gen_physical_tasks(world, count_per_level: int, rng,
                       levels=("easy", "medium", "hard", "dynamic")) -> list:
    """Start/goal coarse nodes sampled under per-difficulty segment counts."""
    coarse = world.coarse
    node_ids = sorted(w.id for w in coarse.nodes.values()
                      if w.kind is WaypointKind.COARSE_SIDEWALK)
    if len(node_ids) < 2:
        raise InfeasibleMapError("coarse graph too small")
    tasks = []
    dt = world.dt
    for level in levels:
        lo, hi = _SEGMENT_BOUNDS[level]
        made = 0
        attempts = 0
        while made < count_per_level:
            attempts += 1
            if attempts > 4000:
                raise InfeasibleMapError(
                    f"cannot satisfy difficulty {level} on this map")
            a = node_ids[rng.randrange(len(node_ids))]
            b = node_ids[rng.randrange(len(node_ids))]
            if a == b:
                continue
            try:
                route = astar(coarse, a, b, mode="pedestrian")
            except NoPathError:
                continue
            n_segments = _route_segment_count(coarse, route)
            if not (lo <= n_segments <= hi):
                continue
            tasks.append(NavTask(
                id=f"nav_{level}_{made:02d}",
                difficulty=level,
                route=route,
                start=a, goal=b,
                time_limit=round(_TIME_LIMITS_S[level] / dt),
            ))
            made += 1
    return tasks


def _leg_yaw(graph, a: str, b: str) -> float:
    wa, wb = graph.nodes[a], graph.nodes[b]
    return math.atan2(wb.y - wa.y, wb.x - wa.x)


def _prominent_building(world, xa, ya, xb, yb, corridor: float = 30.0):
    """Largest-footprint building near the stretch; ties to smallest id."""
    best = None
    mid_x, mid_y = (xa + xb) / 2.0, (ya + yb) / 2.0
    reach = dist2d(xa, ya, xb, yb) / 2.0 + corridor
    for e in world.scene.entities_in_radius(mid_x, mid_y, reach):
        if e.category is not Category.BUILDING:
            continue
        key = (-e.footprint.area, e.id)
        if best is None or key < best[:2]:
            best = (key[0], key[1], e)
    return best[2] if best else None


def gen_multimodal_subtasks(world, start_building: str,
                            goal_building: str) -> list:
    """Decompose a front-door to front-door route into ordered subtasks.

    Turning subtasks appear at every yaw change along the coarse path, with
    left/right read off the relative angle to the next waypoint; visual
    hints are replaced by ground-truth (waypoint, yaw) goals.
    """
    scene = world.scene
    start_b = scene.get(start_building)
    goal_b = scene.get(goal_building)
    coarse = world.coarse

    def front_door(b):
        cx, cy = b.footprint.center
        return coarse.nearest_node(cx, cy,
                                   kinds={WaypointKind.COARSE_SIDEWALK})

    start_wp = front_door(start_b)
    goal_wp = front_door(goal_b)
    if start_wp.id == goal_wp.id:
        yaw = math.atan2(goal_b.footprint.center[1] - start_wp.y,
                         goal_b.footprint.center[0] - start_wp.x)
        return [
            SubTask("orientation_alignment", start_wp.id, yaw,
                    "face the destination", landmark=goal_b.id),
            SubTask("reach_destination", goal_wp.id, yaw,
                    f"you are at the {_describe(goal_b)}", landmark=goal_b.id),
        ]
    route = astar(coarse, start_wp.id, goal_wp.id, mode="pedestrian")
    yaws = [_leg_yaw(coarse, a, b) for a, b in zip(route, route[1:])]
    subtasks = [SubTask("orientation_alignment", route[0], yaws[0],
                        "align with the road", landmark=start_b.id)]
    run_start = 0
    for i in range(1, len(yaws) + 1):
        turned = i < len(yaws) and abs(normalize_angle(yaws[i] - yaws[i - 1])) > 1e-9
        if i == len(yaws) or turned:
            a = route[run_start]
            b = route[i]
            wa, wb = coarse.nodes[a], coarse.nodes[b]
            lm = _prominent_building(world, wa.x, wa.y, wb.x, wb.y)
            subtasks.append(SubTask(
                "move_along_road", b, yaws[i - 1],
                "move along the road"
                + (f" past the {_describe(lm)}" if lm else ""),
                landmark=lm.id if lm else None))
            if turned:
                delta = normalize_angle(yaws[i] - yaws[i - 1])
                direction = "left" if delta > 0 else "right"
                subtasks.append(SubTask(
                    "turning_at_intersection", route[i], yaws[i],
                    f"turn {direction} at the intersection"))
                run_start = i
    goal_yaw = math.atan2(goal_b.footprint.center[1] - goal_wp.y,
                          goal_b.footprint.center[0] - goal_wp.x)
    subtasks.append(SubTask("reach_destination", goal_wp.id, goal_yaw,
                            f"stop at the {_describe(goal_b)}",
                            landmark=goal_b.id))
    return subtasks


def _describe(building) -> str:
    names = [t for t in sorted(building.tags) if t != "landmark"]
    return names[0] if names else "building"


def gen_search_task(world, n_landmarks_per_street: int, rng) -> dict:
    """Landmark memory for the main robot plus two distinct spawn points."""
    landmarks_by_street: dict = {}
    for e in world.scene.iter_entities():
        if e.category is not Category.BUILDING or "landmark" not in e.tags:
            continue
        cx, cy = e.footprint.center
        best = None
        for seg in world.net.segments:
            d = _seg_distance(seg, cx, cy)
            if best is None or (d, seg.id) < best[:2]:
                best = (d, seg.id)
        landmarks_by_street.setdefault(best[1], []).append(e)
    memory = []
    for seg in world.net.segments:
        pool = sorted(landmarks_by_street.get(seg.id, ()), key=lambda e: e.id)
        if not pool:
            raise InfeasibleMapError(f"street {seg.id} has no landmark")
        take = min(n_landmarks_per_street, len(pool))
        picks = [pool[i] for i in sorted(rng.sample(range(len(pool)), take))]
        for b in picks:
            cx, cy = b.footprint.center
            wp = world.fine.nearest_node(cx, cy,
                                         kinds={WaypointKind.FINE_SIDEWALK})
            yaw = math.atan2(cy - wp.y, cx - wp.x)
            memory.append((b.id, (wp.x, wp.y, yaw)))
    spawn_pool = sorted(w.id for w in world.fine.nodes.values()
                        if w.kind is WaypointKind.FINE_SIDEWALK)
    if len(spawn_pool) < 2:
        raise InfeasibleMapError("not enough spawn waypoints")
    first = spawn_pool[rng.randrange(len(spawn_pool))]
    while True:
        second = spawn_pool[rng.randrange(len(spawn_pool))]
        if second != first:
            break
    return {"main_memory": memory, "spawns": [first, second]}


def _seg_distance(seg, x, y) -> float:
    from .geometry import seg_point_distance
    return seg_point_distance(*seg.a, *seg.b, x, y)


# ---------------------------------------------------------------- metrics

def compute_metrics(records: list, family: str = "navigation") -> dict:
    """Episode metric formulas; None encodes an undefined ratio."""
    if not records:
        raise ValueError("records must be non-empty")
    n_total = len(records)
    successes = [r for r in records if r.success]
    n_success = len(successes)
    n_failed = n_total - n_success

    if family == "search":
        tp = [max((r.D0 - r.DT) / r.D0, 0.0) if r.D0 > 0 else 1.0
              for r in records]
        return {
            "CSR": n_success / n_total,
            "TP": sum(tp) / len(tp),
        }

    ssr = [r.subtasks_completed / r.subtasks_total
           for r in records if r.subtasks_total > 0]
    dp = [max((r.d0 - r.dT) / r.d0, 0.0) if r.d0 > 0 else 1.0
          for r in records]
    report = {
        "SR": n_success / n_total,
        "SSR": (sum(ssr) / len(ssr)) if ssr else None,
        "DP": sum(dp) / len(dp),
        "CC": sum(r.collisions_static + r.collisions_dynamic for r in records),
        "CC_static": sum(r.collisions_static for r in records),
        "CC_dynamic": sum(r.collisions_dynamic for r in records),
        "CC-S": sum(r.collisions_static + r.collisions_dynamic
                    for r in successes),
        "RVR": (sum(min(1, r.red_light) for r in successes) / n_success
                if n_success else None),
        "STR": (sum(1 for r in records if not r.success and r.stuck) / n_failed
                if n_failed else None),
        "NDC": (sum(r.decisions / r.fine_waypoints for r in successes)
                / n_success if n_success else None),
        "DSS": (sum(r.decisions for r in successes) / n_success
                if n_success else None),
    }
    return report


def metrics_to_json(report: dict) -> str:
    return json.dumps(report, separators=(",", ":"), sort_keys=True)


def metrics_report_to_csv(report: dict) -> str:
    """Two-row CSV: metric names, then values (empty for undefined)."""
    keys = sorted(report)
    values = ["" if report[k] is None else f"{report[k]:.12g}" for k in keys]
    return ",".join(keys) + "\n" + ",".join(values) + "\n"


def tasks_to_json(tasks: list) -> str:
    return json.dumps([t.to_dict() for t in tasks], separators=(",", ":"))


# ------------------------------------------------------------ stuck probe

@dataclass(frozen=True)
class TraceSample:
    tick: int
    x: float
    y: float
    subtasks_completed: int = 0


def detect_stuck(samples: list, window_ticks: int, dt: float = 0.1) -> bool:
    """Stuck iff the trailing window shows net displacement < 1 m and no
    subtask completion. The window must be fully covered by the trace."""
    if window_ticks <= 0:
        raise ValueError("window must be positive")
    if not samples:
        return False
    end = samples[-1]
    start_tick = end.tick - window_ticks
    if samples[0].tick > start_tick:
        return False  # not observed long enough to call it stuck
    anchor = None
    for s in samples:
        if s.tick >= start_tick:
            anchor = s
            break
    if anchor is None:
        return False
    moved = dist2d(anchor.x, anchor.y, end.x, end.y)
    progressed = end.subtasks_completed > anchor.subtasks_completed
    return moved < STUCK_DISPLACEMENT and not progressed


def default_stuck_window(dt: float) -> int:
    return round(STUCK_WINDOW_S / dt)


# -------------------------------------------------------------- episodes

class NavigationEpisode:
    """Wires a NavTask into the environment's evaluate action and collects
    the EpisodeRecord. A wrong evaluate terminates the episode as failed."""

    def __init__(self, env, task: NavTask, agent_id: str):
        self.env = env
        self.task = task
        self.agent_id = agent_id
        self.subtasks = task.subtasks or []
        self.subtask_index = 0
        self.done = False
        self.success = False
        self.decisions = 0
        self.trace: list = []
        self._event_start = len(env.world.events)
        agent = env.world.agents[agent_id]
        goal_wp = env.world.fine.nodes.get(task.goal) or \
            env.world.coarse.nodes[task.goal]
        self._goal_pos = (goal_wp.x, goal_wp.y)
        self.d0 = manhattan(agent.pose.x, agent.pose.y, *self._goal_pos)
        self.start_tick = env.world.tick
        env.evaluator = self._evaluate
        self._record_trace()

    def _record_trace(self):
        agent = self.env.world.agents[self.agent_id]
        self.trace.append(TraceSample(self.env.world.tick, agent.pose.x,
                                      agent.pose.y, self.subtask_index))

    def note_decision(self):
        self.decisions += 1
        self._record_trace()

    def _current_goal(self):
        if self.subtasks:
            st = self.subtasks[self.subtask_index]
            graph = (self.env.world.coarse
                     if st.goal_waypoint in self.env.world.coarse.nodes
                     else self.env.world.fine)
            wp = graph.nodes[st.goal_waypoint]
            return (wp.x, wp.y), st.goal_yaw
        return self._goal_pos, None

    def _evaluate(self, world, agent):
        if agent.id != self.agent_id or self.done:
            return False, {"reason": "no_active_episode"}
        (gx, gy), gyaw = self._current_goal()
        near = dist2d(agent.pose.x, agent.pose.y, gx, gy) <= GOAL_RANGE
        oriented = (gyaw is None
                    or abs(normalize_angle(agent.pose.yaw - gyaw)) <= GOAL_YAW_TOL)
        if near and oriented:
            if self.subtasks and self.subtask_index < len(self.subtasks) - 1:
                self.subtask_index += 1
                return True, {"subtask": self.subtask_index}
            self.subtask_index = len(self.subtasks)
            self.done = True
            self.success = True
            return True, {"episode": "success"}
        self.done = True
        self.success = False
        return False, {"episode": "failed"}

    def finish(self) -> EpisodeRecord:
        agent = self.env.world.agents[self.agent_id]
        self._record_trace()
        events = self.env.world.events.records[self._event_start:]
        mine = [e for e in events if e.agent_id == self.agent_id]
        window = default_stuck_window(self.env.world.dt)
        return EpisodeRecord(
            task_id=self.task.id,
            success=self.success,
            subtasks_total=len(self.subtasks),
            subtasks_completed=min(self.subtask_index, len(self.subtasks)),
            d0=self.d0,
            dT=manhattan(agent.pose.x, agent.pose.y, *self._goal_pos),
            collisions_static=sum(1 for e in mine
                                  if e.kind == "collision_static"),
            collisions_dynamic=sum(1 for e in mine
                                   if e.kind == "collision_dynamic"),
            red_light=sum(1 for e in mine if e.kind == "red_light_violation"),
            decisions=self.decisions,
            fine_waypoints=max(1, len(self.task.route)),
            stuck=(not self.success and detect_stuck(self.trace, window)),
            ticks_used=self.env.world.tick - self.start_tick,
        )


class SearchEpisode:
    """Two-robot rendezvous: evaluate succeeds when the evaluator can see
    the other robot (within its raster, <= 20 m)."""

    def __init__(self, env, agent_a: str, agent_b: str, task_id: str = "search"):
        self.env = env
        self.pair = (agent_a, agent_b)
        self.task_id = task_id
        self.done = False
        self.success = False
        self.decisions = 0
        a = env.world.agents[agent_a]
        b = env.world.agents[agent_b]
        self.D0 = manhattan(a.pose.x, a.pose.y, b.pose.x, b.pose.y)
        self.start_tick = env.world.tick
        env.evaluator = self._evaluate

    def _evaluate(self, world, agent):
        if agent.id not in self.pair or self.done:
            return False, {"reason": "no_active_episode"}
        other_id = self.pair[1] if agent.id == self.pair[0] else self.pair[0]
        other = world.agents[other_id]
        dist = dist2d(agent.pose.x, agent.pose.y, other.pose.x, other.pose.y)
        cfg = self.env.raster_cfg
        half = min(cfg.height, cfg.width) * cfg.cell / 2.0
        visible = dist <= min(SEARCH_SEE_RANGE, half * math.sqrt(2.0))
        self.done = True
        self.success = visible
        return visible, {"episode": "success" if visible else "failed"}

    def finish(self) -> EpisodeRecord:
        a = self.env.world.agents[self.pair[0]]
        b = self.env.world.agents[self.pair[1]]
        return EpisodeRecord(
            task_id=self.task_id,
            success=self.success,
            D0=self.D0,
            DT=manhattan(a.pose.x, a.pose.y, b.pose.x, b.pose.y),
            decisions=self.decisions,
            ticks_used=self.env.world.tick - self.start_tick,
        )
