"""Fixed-timestep background traffic: vehicles, pedestrians, signals.

Per tick the managers run in order (vehicles, pedestrians, signals), each
updating its entities in ascending id order, so a (seed, config, dt, step
count) tuple fully determines the end state. Vehicles follow directed lane
waypoints under a PID speed controller; pedestrians wander the sidewalk
graph turning at a bounded rate; signals cycle green -> yellow -> red.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import InsufficientSpaceError
from .geometry import AABB, Pose2D, dist2d, normalize_angle, oriented_hull
from .seeding import make_rng
from .waypoints import MODE_PED, MODE_VEH, WaypointGraph, WaypointKind
from .world import (
    PEDESTRIAN_SIZE,
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    World,
)


@dataclass(frozen=True)
class TrafficConfig:
    kp: float = 0.8
    ki: float = 0.1
    kd: float = 0.05
    # clamp 2.0 keeps the step response inside the acceptance envelope;
    # larger clamps let integral windup push overshoot past 10%.
    integral_clamp: float = 2.0
    a_min: float = -4.0
    a_max: float = 3.0
    v_max: float = 14.0
    cruise_speed: float = 10.0
    safe_time_headway: float = 2.0
    min_gap: float = 2.0
    lookahead: float = 30.0
    stop_margin: float = 3.0
    ped_speed: float = 1.4
    ped_turn_rate: float = math.pi / 2.0
    signal_timing: tuple = (10.0, 3.0, 10.0)  # green, yellow, red seconds


@dataclass
class PIDState:
    kp: float
    ki: float
    kd: float
    integral: float = 0.0
    prev_error: float = 0.0
    integral_clamp: float = 2.0

    def step(self, error: float, dt: float) -> float:
        self.integral += error * dt
        if self.integral > self.integral_clamp:
            self.integral = self.integral_clamp
        elif self.integral < -self.integral_clamp:
            self.integral = -self.integral_clamp
        derivative = (error - self.prev_error) / dt
        self.prev_error = error
        return self.kp * error + self.ki * self.integral + self.kd * derivative


@dataclass
class VehicleState:
    id: str
    pose: Pose2D
    speed: float
    target_speed: float
    route: list
    route_cursor: int
    pid: PIDState
    cruise_speed: float = 10.0
    rng: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "pose": [self.pose.x, self.pose.y, self.pose.yaw],
            "speed": self.speed,
            "target_speed": self.target_speed,
            "next_waypoint": (self.route[self.route_cursor]
                              if self.route_cursor < len(self.route) else None),
            "pid": [self.pid.integral, self.pid.prev_error],
        }


@dataclass
class PedestrianState:
    id: str
    pose: Pose2D
    speed: float
    goal: str
    max_turn_rate: float
    prev_node: Optional[str] = None
    rng: object = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "pose": [self.pose.x, self.pose.y, self.pose.yaw],
            "speed": self.speed,
            "goal": self.goal,
        }


@dataclass
class SignalState:
    id: str
    intersection_id: str
    phase: str = "green"
    phase_elapsed: float = 0.0
    timing: tuple = (10.0, 3.0, 10.0)

    _ORDER = ("green", "yellow", "red")

    def duration(self, phase: str) -> float:
        return self.timing[self._ORDER.index(phase)]

    def advance(self, dt: float) -> None:
        self.phase_elapsed += dt
        while self.phase_elapsed >= self.duration(self.phase):
            self.phase_elapsed -= self.duration(self.phase)
            nxt = (self._ORDER.index(self.phase) + 1) % 3
            self.phase = self._ORDER[nxt]

    def to_dict(self) -> dict:
        return {"id": self.id, "phase": self.phase,
                "elapsed": self.phase_elapsed}


# ------------------------------------------------------------ route choice

def _is_uturn(from_id: str, to_id: str) -> bool:
    fa = from_id.split(":")
    ta = to_id.split(":")
    return fa[1] == ta[1] and fa[2] != ta[2]


def choose_route_at_intersection(rng, graph: WaypointGraph, at_id: str) -> str:
    """Uniform pick over outgoing lane arcs, excluding the U-turn unless it
    is the only option. `at_id` is a lane-chain end, which encodes both the
    intersection and the incoming edge."""
    outgoing = sorted(to for to, _ in graph.arcs(at_id, MODE_VEH))
    if not outgoing:
        raise InsufficientSpaceError(f"lane {at_id} has no outgoing arcs")
    non_uturn = [t for t in outgoing if not _is_uturn(at_id, t)]
    options = non_uturn if non_uturn else outgoing
    if len(options) == 1:
        return options[0]
    return options[rng.randrange(len(options))]


def _extend_route(world: World, v: VehicleState) -> bool:
    """Append waypoints past the route end; returns False if stuck."""
    last = v.route[-1]
    arcs = sorted(to for to, _ in world.fine.arcs(last, MODE_VEH))
    while len(arcs) == 1:
        v.route.append(arcs[0])
        last = arcs[0]
        arcs = sorted(to for to, _ in world.fine.arcs(last, MODE_VEH))
        if len(v.route) > v.route_cursor + 64:
            return True
    if not arcs:
        return False
    v.route.append(choose_route_at_intersection(v.rng, world.fine, last))
    return True


def _prune_route(v: VehicleState) -> None:
    if v.route_cursor > 64:
        keep_from = v.route_cursor - 1
        v.route = v.route[keep_from:]
        v.route_cursor -= keep_from


# ----------------------------------------------------------------- vehicles

def _leg_index(world: World) -> dict:
    """Start-of-tick map: (prev_wp, next_wp) -> [(progress_m, vehicle_id)]."""
    index: dict = {}
    for vid in sorted(world.vehicles):
        v = world.vehicles[vid]
        if v.route_cursor < 1 or v.route_cursor >= len(v.route):
            continue
        prev_id = v.route[v.route_cursor - 1]
        next_id = v.route[v.route_cursor]
        prev_wp = world.fine.nodes[prev_id]
        progress = dist2d(prev_wp.x, prev_wp.y, v.pose.x, v.pose.y)
        index.setdefault((prev_id, next_id), []).append((progress, vid))
    return index


def _leader_gap(world: World, v: VehicleState, index: dict,
                lookahead: float) -> Optional[float]:
    """Center-to-center distance to the nearest vehicle ahead on the route."""
    if v.route_cursor >= len(v.route):
        return None
    prev_id = v.route[v.route_cursor - 1]
    next_id = v.route[v.route_cursor]
    prev_wp = world.fine.nodes[prev_id]
    my_progress = dist2d(prev_wp.x, prev_wp.y, v.pose.x, v.pose.y)
    best = None
    for progress, vid in index.get((prev_id, next_id), ()):
        if vid != v.id and progress > my_progress:
            gap = progress - my_progress
            if best is None or gap < best:
                best = gap
    next_wp = world.fine.nodes[next_id]
    acc = dist2d(v.pose.x, v.pose.y, next_wp.x, next_wp.y)
    j = v.route_cursor
    while acc < lookahead and j + 1 < len(v.route):
        leg = (v.route[j], v.route[j + 1])
        for progress, vid in index.get(leg, ()):
            if vid != v.id:
                gap = acc + progress
                if gap > 0 and (best is None or gap < best):
                    best = gap
        wa = world.fine.nodes[leg[0]]
        wb = world.fine.nodes[leg[1]]
        acc += dist2d(wa.x, wa.y, wb.x, wb.y)
        j += 1
    if best is not None and best <= lookahead:
        return best
    return None


def _red_stop_distance(world: World, v: VehicleState, lookahead: float):
    """Distance to the next red stop point on the route, if any."""
    if v.route_cursor >= len(v.route):
        return None
    acc = 0.0
    pos_x, pos_y = v.pose.x, v.pose.y
    for j in range(v.route_cursor, len(v.route)):
        wp = world.fine.nodes[v.route[j]]
        acc += dist2d(pos_x, pos_y, wp.x, wp.y)
        if acc > lookahead:
            return None
        sig_id = world.fine.stop_signals.get(v.route[j])
        if sig_id is not None:
            signal = world.signals.get(sig_id)
            if signal is not None and signal.phase == "red":
                return acc
        pos_x, pos_y = wp.x, wp.y
    return None


def _update_vehicle(world: World, v: VehicleState, cfg: TrafficConfig,
                    index: dict, dt: float) -> None:
    # Keep a lookahead's worth of route ahead of the cursor.
    while (v.route_cursor >= len(v.route)
           or _route_remaining(world, v) < cfg.lookahead):
        if not _extend_route(world, v):
            break
        if len(v.route) > v.route_cursor + 128:
            break

    # Perceive: leader and signals from the start-of-tick snapshot.
    target = v.cruise_speed
    gap = _leader_gap(world, v, index, cfg.lookahead)
    if gap is not None and (gap - VEHICLE_LENGTH) < (
            cfg.safe_time_headway * v.speed + cfg.min_gap):
        target = 0.0
    red_dist = _red_stop_distance(world, v, cfg.lookahead)
    if red_dist is not None:
        braking = v.speed * v.speed / (2.0 * abs(cfg.a_min)) + cfg.stop_margin
        if red_dist <= braking:
            target = 0.0
    v.target_speed = target

    accel = v.pid.step(target - v.speed, dt)
    if accel > cfg.a_max:
        accel = cfg.a_max
    elif accel < cfg.a_min:
        accel = cfg.a_min
    v.speed = min(cfg.v_max, max(0.0, v.speed + accel * dt))

    if v.speed <= 0.0 or v.route_cursor >= len(v.route):
        return
    # Integrate along the route polyline.
    remaining = v.speed * dt
    x, y, yaw = v.pose.x, v.pose.y, v.pose.yaw
    cursor = v.route_cursor
    while remaining > 0.0 and cursor < len(v.route):
        wp = world.fine.nodes[v.route[cursor]]
        d = dist2d(x, y, wp.x, wp.y)
        if d > remaining:
            yaw = math.atan2(wp.y - y, wp.x - x)
            x += math.cos(yaw) * remaining
            y += math.sin(yaw) * remaining
            remaining = 0.0
        else:
            if d > 0.0:
                yaw = math.atan2(wp.y - y, wp.x - x)
            x, y = wp.x, wp.y
            remaining -= d
            cursor += 1
    new_pose = Pose2D(x, y, yaw)
    hull = oriented_hull(x, y, VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0, yaw)
    if world.scene.collides(hull) or any(
            hull.overlaps(fp) for _, fp in world.dynamic_footprints(exclude=v.id)):
        v.speed = 0.0  # movement cancelled: no interpenetration
        return
    v.pose = new_pose
    v.route_cursor = cursor
    _prune_route(v)


def _route_remaining(world: World, v: VehicleState) -> float:
    if v.route_cursor >= len(v.route):
        return 0.0
    total = 0.0
    x, y = v.pose.x, v.pose.y
    for j in range(v.route_cursor, len(v.route)):
        wp = world.fine.nodes[v.route[j]]
        total += dist2d(x, y, wp.x, wp.y)
        x, y = wp.x, wp.y
    return total


# -------------------------------------------------------------- pedestrians

def _ped_pick_next(world: World, p: PedestrianState) -> Optional[str]:
    neighbors = sorted(to for to, _ in world.fine.arcs(p.goal, MODE_PED))
    options = [n for n in neighbors if n != p.prev_node]
    if not options:
        options = neighbors
    # skip nodes whose slot is physically occupied
    free = []
    for n in options:
        wp = world.fine.nodes[n]
        fp = AABB.from_center(wp.x, wp.y, PEDESTRIAN_SIZE, PEDESTRIAN_SIZE)
        if not world.scene.collides(fp):
            free.append(n)
    if not free:
        return None
    if len(free) == 1:
        return free[0]
    return free[p.rng.randrange(len(free))]


def _update_pedestrian(world: World, p: PedestrianState, cfg: TrafficConfig,
                       dt: float) -> None:
    goal_wp = world.fine.nodes[p.goal]
    if dist2d(p.pose.x, p.pose.y, goal_wp.x, goal_wp.y) < 0.25:
        nxt = _ped_pick_next(world, p)
        if nxt is None:
            return
        p.prev_node, p.goal = p.goal, nxt
        goal_wp = world.fine.nodes[p.goal]

    # Wait at a red crosswalk before stepping onto it.
    entering_crosswalk = (
        goal_wp.kind is WaypointKind.FINE_CROSSWALK
        and (p.prev_node is None
             or world.fine.nodes[p.prev_node].kind is not WaypointKind.FINE_CROSSWALK)
    )
    if entering_crosswalk and goal_wp.signal_id is not None:
        signal = world.signals.get(goal_wp.signal_id)
        if signal is not None and signal.phase == "red":
            return

    desired = math.atan2(goal_wp.y - p.pose.y, goal_wp.x - p.pose.x)
    delta = normalize_angle(desired - p.pose.yaw)
    max_turn = p.max_turn_rate * dt
    if delta > max_turn:
        delta = max_turn
    elif delta < -max_turn:
        delta = -max_turn
    yaw = normalize_angle(p.pose.yaw + delta)
    step = min(p.speed * dt, dist2d(p.pose.x, p.pose.y, goal_wp.x, goal_wp.y))
    x = p.pose.x + math.cos(yaw) * step
    y = p.pose.y + math.sin(yaw) * step
    fp = AABB.from_center(x, y, PEDESTRIAN_SIZE, PEDESTRIAN_SIZE)
    if world.scene.collides(fp) or any(
            fp.overlaps(ofp) for _, ofp in world.dynamic_footprints(exclude=p.id)):
        p.pose = Pose2D(p.pose.x, p.pose.y, yaw)  # rotate in place only
        return
    p.pose = Pose2D(x, y, yaw)


# ------------------------------------------------------------------- driver

def step_traffic(world: World, dt: Optional[float] = None,
                 cfg: Optional[TrafficConfig] = None) -> None:
    """One deterministic tick: vehicles, then pedestrians, then signals."""
    dt = world.dt if dt is None else dt
    if cfg is None:
        cfg = getattr(world, "traffic_cfg", None) or TrafficConfig()
    index = _leg_index(world)
    for vid in sorted(world.vehicles):
        _update_vehicle(world, world.vehicles[vid], cfg, index, dt)
    for pid in sorted(world.pedestrians):
        _update_pedestrian(world, world.pedestrians[pid], cfg, dt)
    for sid in sorted(world.signals):
        world.signals[sid].advance(dt)


def run_traffic(world: World, ticks: int) -> None:
    for _ in range(ticks):
        world.tick += 1
        step_traffic(world)


# -------------------------------------------------------------------- spawn

def deploy_signals(world: World, timing: tuple = (10.0, 3.0, 10.0)) -> None:
    for node in world.net.intersections:
        if node.degree >= 3:
            sid = f"sig:{node.id}"
            if sid not in world.signals:
                world.signals[sid] = SignalState(
                    id=sid, intersection_id=node.id, timing=timing)


def spawn_population(world: World, n_vehicles: int, n_pedestrians: int,
                     rng=None, cfg: Optional[TrafficConfig] = None) -> None:
    """Vehicles onto lane waypoints, pedestrians onto sidewalk waypoints;
    no two spawned entities overlap. Signals go to every degree>=3 node."""
    cfg = cfg or TrafficConfig()
    world.traffic_cfg = cfg
    if rng is None:
        rng = make_rng(world.base_seed, "spawn")
    deploy_signals(world, cfg.signal_timing)

    lane_ids = sorted(w.id for w in world.fine.nodes.values()
                      if w.kind is WaypointKind.ROAD_LANE
                      and world.fine.arcs(w.id, MODE_VEH))
    shuffled = list(lane_ids)
    rng.shuffle(shuffled)
    placed = 0
    for wid in shuffled:
        if placed >= n_vehicles:
            break
        wp = world.fine.nodes[wid]
        arcs = sorted(to for to, _ in world.fine.arcs(wid, MODE_VEH))
        nxt = world.fine.nodes[arcs[0]]
        yaw = math.atan2(nxt.y - wp.y, nxt.x - wp.x)
        hull = oriented_hull(wp.x, wp.y, VEHICLE_LENGTH / 2.0 + 1.0,
                             VEHICLE_WIDTH / 2.0, yaw)
        if world.collides_any(hull):
            continue
        vid = f"veh_{placed:04d}"
        world.vehicles[vid] = VehicleState(
            id=vid,
            pose=Pose2D(wp.x, wp.y, yaw),
            speed=0.0,
            target_speed=cfg.cruise_speed,
            route=[wid, arcs[0]],
            route_cursor=1,
            pid=PIDState(cfg.kp, cfg.ki, cfg.kd,
                         integral_clamp=cfg.integral_clamp),
            cruise_speed=cfg.cruise_speed,
            rng=make_rng(world.base_seed, "route", vid),
        )
        placed += 1
    if placed < n_vehicles:
        raise InsufficientSpaceError(
            f"only {placed} of {n_vehicles} vehicle slots available")

    side_ids = sorted(w.id for w in world.fine.nodes.values()
                      if w.kind is WaypointKind.FINE_SIDEWALK)
    shuffled = list(side_ids)
    rng.shuffle(shuffled)
    placed = 0
    from .geometry import AABB
    for wid in shuffled:
        if placed >= n_pedestrians:
            break
        wp = world.fine.nodes[wid]
        fp = AABB.from_center(wp.x, wp.y, PEDESTRIAN_SIZE, PEDESTRIAN_SIZE)
        if world.collides_any(fp):
            continue
        pid = f"ped_{placed:04d}"
        prng = make_rng(world.base_seed, "ped", pid)
        neighbors = sorted(to for to, _ in world.fine.arcs(wid, MODE_PED))
        if not neighbors:
            continue
        goal = neighbors[prng.randrange(len(neighbors))]
        world.pedestrians[pid] = PedestrianState(
            id=pid,
            pose=Pose2D(wp.x, wp.y, 0.0),
            speed=cfg.ped_speed,
            goal=goal,
            max_turn_rate=cfg.ped_turn_rate,
            prev_node=wid,
            rng=prng,
        )
        placed += 1
    if placed < n_pedestrians:
        raise InsufficientSpaceError(
            f"only {placed} of {n_pedestrians} pedestrian slots available")
