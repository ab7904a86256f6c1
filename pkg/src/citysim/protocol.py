"""Newline-delimited JSON command protocol over TCP.

One JSON object per LF-terminated UTF-8 line. Requests carry a client-
chosen integer id which the response echoes; malformed lines get an error
with id 0 and never crash the server. Connection readers feed a shared
queue; a single executor thread owns the world, so every mutation honors
the environment's single-consumer contract. Per-connection back-pressure
caps pending commands at 64.
"""

from __future__ import annotations

import base64
import json
import queue
import socket
import threading
from typing import Optional

from .delivery import (
    DeliveryTask,
    EconomyConfig,
    compute_delivery_metrics,
    metrics_to_csv,
)
from .env import ActionBuffer, ActionCommand, Environment, ScenarioConfig
from .errors import CitySimError, ScenarioInvalidError
from .geometry import AABB, Pose2D
from .planner import HighLevelPlan, expand_rule_based, parse, tick_executor
from .scene import Category, SceneEditCommand
from .seeding import make_rng
from .tasks import (
    NavigationEpisode,
    compute_metrics,
    gen_physical_tasks,
)
from .world import load_map

MAX_PENDING_PER_CONNECTION = 64
MAX_LINE_BYTES = 1 << 20
_TICK = object()  # ticker sentinel processed by the executor thread


class WorldSession:
    """Command dispatch over one environment; executor-thread only."""

    def __init__(self, env: Optional[Environment] = None):
        self.env = env
        self.programs: dict = {}         # agent_id -> PlanProgram
        self.pending_acts: dict = {}     # agent_id -> ActionCommand
        self.delivery: Optional[DeliveryTask] = None
        self.nav_tasks: list = []
        self.episode = None
        self.records: list = []
        self._agent_counter = 0
        # live asynchronous mode: actions buffer + wall-clock ticker flag
        self.async_mode = False
        self.async_interval = 0.1
        self.async_buffer = ActionBuffer()

    # ------------------------------------------------------------ helpers

    def _need_env(self) -> Environment:
        if self.env is None:
            raise ScenarioInvalidError("no world loaded")
        return self.env

    def _tick_actions(self) -> dict:
        env = self._need_env()
        actions = {}
        for aid in sorted(env.world.agents):
            if aid in self.pending_acts:
                actions[aid] = self.pending_acts.pop(aid)
                continue
            program = self.programs.get(aid)
            if program is not None and program.status == "running":
                cmd = tick_executor(program, env.world, env.world.agents[aid])
                if cmd is not None:
                    actions[aid] = cmd
        return actions

    def step(self, n: int = 1) -> dict:
        env = self._need_env()
        for _ in range(max(1, n)):
            env.step_sync(self._tick_actions())
        return {"tick": env.world.tick}

    # ----------------------------------------------------------- commands

    def cmd_world_load(self, args) -> dict:
        scenario = ScenarioConfig.from_dict(args.get("scenario", args))
        map_path = args.get("map_path")
        if map_path:
            world = load_map(map_path, base_seed=scenario.seed,
                             dt=scenario.interval)
            from .traffic import spawn_population
            spawn_population(world, scenario.n_vehicles,
                             scenario.n_pedestrians,
                             rng=make_rng(scenario.seed, "spawn"))
            self.env = Environment(scenario, world=world)
        else:
            self.env = Environment(scenario)
        self.programs.clear()
        self.pending_acts.clear()
        return self.cmd_world_info({})

    def cmd_world_reset(self, args) -> dict:
        env = self._need_env()
        scenario = env.scenario
        map_path = args.get("map_path")
        self.programs.clear()
        self.pending_acts.clear()
        if map_path:
            doc = {
                "gen": scenario.gen,
                "seed": scenario.seed,
                "agents": scenario.agents,
                "traffic": {"n_vehicles": scenario.n_vehicles,
                            "n_pedestrians": scenario.n_pedestrians},
                "mode": scenario.mode,
                "interval": scenario.interval,
            }
            return self.cmd_world_load({"scenario": doc,
                                        "map_path": map_path})
        self.env = Environment(scenario)
        return self.cmd_world_info({})

    def cmd_world_info(self, args) -> dict:
        env = self._need_env()
        ext = env.world.scene.extent
        return {
            "extent": [ext.min_x, ext.min_y, ext.max_x, ext.max_y],
            "tick": env.world.tick,
            "agents": sorted(env.world.agents),
            "n_entities": len(env.world.scene),
            "n_vehicles": len(env.world.vehicles),
            "n_pedestrians": len(env.world.pedestrians),
        }

    def cmd_scene_query(self, args) -> dict:
        env = self._need_env()
        mode = args.get("mode", "nearest")
        if mode == "nearest":
            entity = env.world.scene.nearest(
                Pose2D(args["x"], args["y"]),
                Category(args["category"]), args.get("tag"))
            return {"entity": _entity_doc(entity)}
        if mode == "region":
            box = AABB(args["min_x"], args["min_y"], args["max_x"], args["max_y"])
            hits = env.world.scene.entities_overlapping(box)
            return {"entities": [_entity_doc(e) for e in hits]}
        raise ScenarioInvalidError(f"unknown query mode {mode!r}")

    def cmd_scene_edit(self, args) -> dict:
        env = self._need_env()
        op = args.get("op")
        if op == "remove":
            env.world.scene.edit(SceneEditCommand(op="remove",
                                                  entity_id=args.get("id")))
            return {"removed": args.get("id")}
        cmd = SceneEditCommand(
            op="add",
            category=Category(args["category"]),
            tags=frozenset(args.get("tags", ())),
            anchor_category=Category(args["anchor"]["category"]),
            anchor_tag=args["anchor"].get("tag"),
            offset_distance=args.get("offset_distance", 2.0),
            size=tuple(args.get("size", (1.0, 1.0))),
            blocking=args.get("blocking", True),
        )
        new_id = env.world.scene.edit(cmd)
        return {"added": new_id}

    def cmd_agent_register(self, args) -> dict:
        env = self._need_env()
        self._agent_counter += 1
        aid = args.get("id", f"client_{self._agent_counter}")
        spec = {"id": aid,
                "embodiment": args.get("embodiment", "humanoid")}
        if "spawn_waypoint" in args:
            spec["spawn_waypoint"] = args["spawn_waypoint"]
        if "vitals" in args:
            spec["vitals"] = args["vitals"]
        scenario = ScenarioConfig(gen=env.scenario.gen, agents=[spec])
        env._register_agents(scenario)
        return {"agent_id": aid}

    def cmd_agent_observe(self, args) -> dict:
        env = self._need_env()
        obs = env.observe(args["id"])
        doc = obs.to_dict(include_raster=False)
        if args.get("include_raster"):
            raster = obs.local_raster
            doc["raster_shape"] = list(raster.shape)
            doc["raster_b64"] = base64.b64encode(raster.tobytes()).decode("ascii")
        return {"observation": doc,
                "state": env.world.agents[args["id"]].to_dict()}

    def cmd_agent_act(self, args) -> dict:
        env = self._need_env()
        aid = args["id"]
        if aid not in env.world.agents:
            raise ScenarioInvalidError(f"unknown agent {aid}")
        cmd = ActionCommand(aid, args["verb"], dict(args.get("args", {})))
        if self.async_mode:
            # buffered: at most one pending action per available agent
            self.async_buffer.submit(env.world.tick, cmd)
            return {"queued": True, "tick": env.world.tick}
        self.pending_acts[aid] = cmd
        env.step_sync(self._tick_actions())
        agent = env.world.agents[aid]
        fb = agent.last_feedback
        return {"feedback": fb.to_dict() if fb else None,
                "tick": env.world.tick}

    def cmd_sim_run(self, args) -> dict:
        """Switch between lockstep stepping and wall-clock buffered mode."""
        env = self._need_env()
        mode = args.get("mode", "async")
        if mode == "async":
            self.async_mode = True
            self.async_interval = float(args.get("interval", env.interval))
            if self.async_interval <= 0:
                raise ScenarioInvalidError("interval must be positive")
        elif mode == "sync":
            self.async_mode = False
        else:
            raise ScenarioInvalidError(f"unknown mode {mode!r}")
        return {"mode": mode, "interval": self.async_interval,
                "tick": env.world.tick}

    def async_tick(self) -> None:
        """One buffered drain + environment tick (executor thread only)."""
        if not self.async_mode or self.env is None:
            return
        env = self.env
        actions = self.async_buffer.drain(env.world.tick)
        for aid in sorted(env.world.agents):
            if aid in actions:
                continue
            program = self.programs.get(aid)
            if program is not None and program.status == "running":
                from .planner import tick_executor
                cmd = tick_executor(program, env.world, env.world.agents[aid])
                if cmd is not None:
                    actions[aid] = cmd
        env.advance(actions)

    def cmd_agent_plan(self, args) -> dict:
        env = self._need_env()
        aid = args["id"]
        agent = env.world.agents.get(aid)
        if agent is None:
            raise ScenarioInvalidError(f"unknown agent {aid}")
        if "command" in args:
            plan = parse(args["command"])
        else:
            plan = HighLevelPlan.from_dict(args["plan"])
        program = expand_rule_based(plan, env.world, agent)
        self.programs[aid] = program
        return {"status": program.status,
                "hops": program.hops,
                "compiled_cost": program.compiled_cost}

    def cmd_task_start(self, args) -> dict:
        env = self._need_env()
        kind = args.get("kind")
        if kind == "delivery":
            cfg = EconomyConfig(**args.get("economy", {}))
            self.delivery = DeliveryTask(env, cfg)
            return {"task": "delivery",
                    "restaurants": len(self.delivery.restaurants)}
        if kind == "nav":
            rng = make_rng(args.get("seed", env.scenario.seed), "tasks")
            count = args.get("count_per_level", 10)
            self.nav_tasks = gen_physical_tasks(env.world, count, rng)
            if args.get("agent") and self.nav_tasks:
                idx = args.get("task_index", 0)
                self.episode = NavigationEpisode(env, self.nav_tasks[idx],
                                                 args["agent"])
            return {"task": "nav", "count": len(self.nav_tasks)}
        raise ScenarioInvalidError(f"unknown task kind {kind!r}")

    def cmd_task_status(self, args) -> dict:
        out = {"programs": {aid: p.status for aid, p in self.programs.items()}}
        if self.episode is not None:
            out["episode"] = {"done": self.episode.done,
                              "success": self.episode.success}
        if self.delivery is not None:
            out["orders"] = {
                oid: o.state for oid, o in sorted(self.delivery.orders.items())
            }
        return out

    def cmd_metrics_export(self, args) -> dict:
        kind = args.get("kind", "delivery")
        if kind == "delivery":
            if self.delivery is None:
                raise ScenarioInvalidError("no delivery task running")
            report = compute_delivery_metrics(self.delivery.ledger,
                                              self.env.world.agents)
            return {"csv": metrics_to_csv(report, args.get("model", "client"))}
        if kind == "nav":
            if not self.records:
                raise ScenarioInvalidError("no episode records")
            return {"report": compute_metrics(self.records)}
        raise ScenarioInvalidError(f"unknown metrics kind {kind!r}")

    def cmd_sim_step(self, args) -> dict:
        return self.step(int(args.get("n", 1)))

    def cmd_events_poll(self, args) -> dict:
        env = self._need_env()
        since = int(args.get("since", 0))
        events = env.world.events.since(since)
        return {"events": [e.to_dict() for e in events],
                "next": len(env.world.events)}

    COMMANDS = {
        "world.load": cmd_world_load,
        "world.reset": cmd_world_reset,
        "world.info": cmd_world_info,
        "scene.query": cmd_scene_query,
        "scene.edit": cmd_scene_edit,
        "agent.register": cmd_agent_register,
        "agent.observe": cmd_agent_observe,
        "agent.act": cmd_agent_act,
        "agent.plan": cmd_agent_plan,
        "task.start": cmd_task_start,
        "task.status": cmd_task_status,
        "metrics.export": cmd_metrics_export,
        "sim.step": cmd_sim_step,
        "sim.run": cmd_sim_run,
        "events.poll": cmd_events_poll,
    }

    def handle(self, doc: dict) -> dict:
        req_id = doc.get("id", 0)
        if not isinstance(req_id, int):
            req_id = 0
        cmd = doc.get("cmd")
        handler = self.COMMANDS.get(cmd)
        if handler is None:
            return _error(req_id, "unknown_command", f"unknown cmd {cmd!r}")
        try:
            data = handler(self, doc.get("args", {}) or {})
            return {"id": req_id, "status": "ok", "data": data}
        except CitySimError as exc:
            return _error(req_id, exc.code, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return _error(req_id, "bad_args", f"{type(exc).__name__}: {exc}")


def _entity_doc(e) -> dict:
    return {"id": e.id, "category": e.category.value,
            "pose": [e.pose.x, e.pose.y, e.pose.yaw],
            "footprint": [e.footprint.min_x, e.footprint.min_y,
                          e.footprint.max_x, e.footprint.max_y],
            "tags": sorted(e.tags), "blocking": e.blocking}


def _error(req_id: int, code: str, message: str) -> dict:
    return {"id": req_id, "status": "error",
            "error": {"code": code, "message": message}}


# -------------------------------------------------------------- the server

class ProtocolServer:
    """Threaded TCP server around one WorldSession."""

    def __init__(self, host: str = "127.0.0.1", port: int = 9000,
                 env: Optional[Environment] = None):
        self.session = WorldSession(env)
        self._queue: queue.Queue = queue.Queue()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.address = self._listener.getsockname()
        self._running = threading.Event()
        self._threads: list = []

    def start(self) -> None:
        self._running.set()
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        execute = threading.Thread(target=self._executor_loop, daemon=True)
        ticker = threading.Thread(target=self._ticker_loop, daemon=True)
        accept.start()
        execute.start()
        ticker.start()
        self._threads = [accept, execute, ticker]

    def _ticker_loop(self) -> None:
        # wall-clock pacing for live async mode; ticks run on the executor
        # thread so the world keeps a single writer
        import time
        while self._running.is_set():
            if self.session.async_mode:
                self._queue.put(_TICK)
                time.sleep(self.session.async_interval)
            else:
                time.sleep(0.02)

    def stop(self) -> None:
        self._running.clear()
        try:
            self._listener.close()
        except OSError:
            pass
        self._queue.put(None)

    def serve_forever(self) -> None:
        self.start()
        try:
            while self._running.is_set():
                self._threads[1].join(timeout=0.5)
        except KeyboardInterrupt:
            self.stop()

    # ---------------------------------------------------------- internals

    def _accept_loop(self) -> None:
        while self._running.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            state = _ConnState(conn)
            t = threading.Thread(target=self._reader_loop, args=(state,),
                                 daemon=True)
            t.start()

    def _reader_loop(self, state: "_ConnState") -> None:
        buf = b""
        conn = state.conn
        while self._running.is_set():
            try:
                chunk = conn.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                if len(line) > MAX_LINE_BYTES:
                    state.send(_error(0, "overlong", "line too long"))
                    continue
                try:
                    doc = json.loads(line.decode("utf-8"))
                    if not isinstance(doc, dict):
                        raise ValueError("not an object")
                except (ValueError, UnicodeDecodeError) as exc:
                    state.send(_error(0, "malformed", f"bad json: {exc}"))
                    continue
                if state.pending() >= MAX_PENDING_PER_CONNECTION:
                    state.send(_error(doc.get("id", 0)
                                      if isinstance(doc.get("id"), int) else 0,
                                      "overloaded", "too many pending commands"))
                    continue
                state.inc()
                self._queue.put((state, doc))
        # connection drop deregisters nothing: agents persist
        try:
            conn.close()
        except OSError:
            pass

    def _executor_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            if item is _TICK:
                try:
                    self.session.async_tick()
                except Exception:
                    pass
                continue
            state, doc = item
            try:
                response = self.session.handle(doc)
            except Exception as exc:  # executor must never die
                response = _error(doc.get("id", 0)
                                  if isinstance(doc.get("id"), int) else 0,
                                  "internal", f"{type(exc).__name__}: {exc}")
            state.dec()
            state.send(response)


class _ConnState:
    def __init__(self, conn: socket.socket):
        self.conn = conn
        self._send_lock = threading.Lock()
        self._pending = 0
        self._pending_lock = threading.Lock()

    def pending(self) -> int:
        with self._pending_lock:
            return self._pending

    def inc(self) -> None:
        with self._pending_lock:
            self._pending += 1

    def dec(self) -> None:
        with self._pending_lock:
            self._pending -= 1

    def send(self, doc: dict) -> None:
        data = json.dumps(doc, separators=(",", ":")).encode("utf-8") + b"\n"
        with self._send_lock:
            try:
                self.conn.sendall(data)
            except OSError:
                pass
