"""Command-line front end: generate maps, run simulations, drive task
suites, export metrics, serve the TCP protocol, render top-down rasters.

Exit codes: 0 on success, 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .catalog import Catalog
from .delivery import (
    EconomyConfig,
    metrics_to_csv,
    order_events_jsonl,
    run_delivery_episode,
)
from .env import Environment, ScenarioConfig, run_async
from .errors import CitySimError
from .procgen import GenConfig, generate_city
from .scene import CATEGORY_IDS, Category
from .seeding import make_rng
from .tasks import gen_physical_tasks, tasks_to_json
from .traffic import spawn_population
from .world import load_map, save_map


def _parse_size(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return float(w), float(h)
    except ValueError as exc:
        raise CitySimError(f"bad --size {text!r}, expected WxH") from exc


def cmd_gen(args) -> int:
    width, height = _parse_size(args.size)
    catalog = Catalog.load(args.catalog) if args.catalog else Catalog.default()
    cfg = GenConfig(seed=args.seed, width=width, height=height,
                    road_density=args.road_density,
                    building_density=args.building_density,
                    street_element_density=args.element_density,
                    obstacle_task_mode=args.obstacle_mode,
                    catalog=catalog)
    scene, net = generate_city(cfg)
    save_map(args.out, scene, net)
    stats = scene.meta.get("build_stats", {})
    print(f"wrote {args.out} ({len(net.segments)} segments, "
          f"{len(scene)} entities, fill {stats.get('fill_fraction', 0):.2f})")
    return 0


def _world_from_map(args, seed, dt=0.1):
    world = load_map(args.map, base_seed=seed, dt=dt)
    return world


def cmd_run(args) -> int:
    scenario = ScenarioConfig(gen=GenConfig(seed=args.seed), seed=args.seed,
                              agents=[], n_vehicles=args.vehicles,
                              n_pedestrians=args.pedestrians,
                              mode=args.mode)
    world = _world_from_map(args, args.seed)
    spawn_population(world, args.vehicles, args.pedestrians,
                     rng=make_rng(args.seed, "spawn"))
    env = Environment(scenario, world=world)
    if args.mode == "async":
        run_async(env, lambda aid, obs, tick: None,
                  duration=args.steps * env.interval)
    else:
        for _ in range(args.steps):
            env.step_sync({})
    digest = __import__("hashlib").sha256(
        env.world.serialize_state().encode()).hexdigest()
    print(f"ran {args.steps} steps, state sha256 {digest[:16]}")
    return 0


def cmd_task_delivery(args) -> int:
    world = _world_from_map(args, args.seed)
    scenario = ScenarioConfig(
        gen=GenConfig(seed=args.seed), seed=args.seed,
        agents=[{"embodiment": "humanoid"} for _ in range(args.agents)])
    env = Environment(scenario, world=world)
    cfg = EconomyConfig(hunger_rate=args.hunger)
    task, report = run_delivery_episode(env, cfg, ticks=args.steps)
    csv_text = metrics_to_csv(report, model=args.model)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    if args.events:
        with open(args.events, "w", encoding="utf-8") as fh:
            fh.write(order_events_jsonl(env.world))
    print(f"wrote {args.out} ({len(task.orders)} orders, "
          f"{args.agents} agents, {args.steps} steps)")
    return 0


def cmd_task_nav(args) -> int:
    world = _world_from_map(args, args.seed)
    tasks = gen_physical_tasks(world, args.count_per_level,
                               make_rng(args.seed, "tasks"))
    with open(args.suite, "w", encoding="utf-8") as fh:
        fh.write(tasks_to_json(tasks))
    print(f"wrote {args.suite} ({len(tasks)} tasks)")
    return 0


def cmd_serve(args) -> int:
    from .protocol import ProtocolServer

    env = None
    if args.map:
        world = _world_from_map(args, args.seed)
        spawn_population(world, args.vehicles, args.pedestrians,
                         rng=make_rng(args.seed, "spawn"))
        scenario = ScenarioConfig(gen=GenConfig(seed=args.seed),
                                  seed=args.seed, agents=[])
        env = Environment(scenario, world=world)
    server = ProtocolServer(host=args.host, port=args.port, env=env)
    print(f"serving on {server.address[0]}:{server.address[1]}")
    server.serve_forever()
    return 0


_RENDER_COLORS = {
    0: (34, 51, 34),                   # empty ground
    CATEGORY_IDS[Category.ROAD_SEGMENT]: (70, 70, 70),
    CATEGORY_IDS[Category.BUILDING]: (170, 120, 80),
    CATEGORY_IDS[Category.VEGETATION]: (40, 140, 50),
    CATEGORY_IDS[Category.URBAN_PROP]: (200, 190, 60),
    CATEGORY_IDS[Category.VEHICLE]: (60, 110, 200),
    CATEGORY_IDS[Category.PEDESTRIAN]: (220, 80, 80),
    CATEGORY_IDS[Category.ROBOT]: (150, 80, 200),
    CATEGORY_IDS[Category.HUMANOID]: (240, 140, 40),
    CATEGORY_IDS[Category.TRAFFIC_SIGNAL]: (250, 240, 240),
    CATEGORY_IDS[Category.GENERATED_ASSET]: (120, 200, 220),
}


def cmd_render(args) -> int:
    import numpy as np

    world = _world_from_map(args, 0)
    ext = world.scene.extent
    cell = args.cell
    w = max(1, int(ext.width / cell))
    h = max(1, int(ext.height / cell))
    grid = np.zeros((h, w), dtype=np.uint8)
    order = sorted(world.scene.iter_entities(),
                   key=lambda e: (e.category is not Category.ROAD_SEGMENT, e.id))
    for e in order:
        fp = e.footprint
        x0 = max(0, int((fp.min_x - ext.min_x) / cell))
        x1 = min(w, int((fp.max_x - ext.min_x) / cell) + 1)
        # image row 0 is the north edge
        y0 = max(0, int((ext.max_y - fp.max_y) / cell))
        y1 = min(h, int((ext.max_y - fp.min_y) / cell) + 1)
        grid[y0:y1, x0:x1] = CATEGORY_IDS[e.category]
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for cid, color in _RENDER_COLORS.items():
        rgb[grid == cid] = color
    with open(args.out, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())
    print(f"wrote {args.out} ({w}x{h})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="citysim",
                                 description="headless urban world simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a city map")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", default="600x600", help="extent WxH in meters")
    g.add_argument("--road-density", type=float, default=40.0)
    g.add_argument("--building-density", type=float, default=0.9)
    g.add_argument("--element-density", type=float, default=0.25)
    g.add_argument("--obstacle-mode", action="store_true")
    g.add_argument("--catalog", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run background traffic on a map")
    r.add_argument("--map", required=True)
    r.add_argument("--mode", choices=("sync", "async"), default="sync")
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--vehicles", type=int, default=10)
    r.add_argument("--pedestrians", type=int, default=10)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("task", help="run or generate a task suite")
    tsub = t.add_subparsers(dest="task_kind", required=True)
    td = tsub.add_parser("delivery", help="scripted delivery economy episode")
    td.add_argument("--map", required=True)
    td.add_argument("--agents", type=int, default=20)
    td.add_argument("--steps", type=int, default=5000)
    td.add_argument("--hunger", type=float, default=0.9)
    td.add_argument("--seed", type=int, default=0)
    td.add_argument("--model", default="scripted")
    td.add_argument("--out", required=True)
    td.add_argument("--events", default=None, help="order event JSONL path")
    td.set_defaults(func=cmd_task_delivery)
    tn = tsub.add_parser("nav", help="generate the navigation suite")
    tn.add_argument("--map", required=True)
    tn.add_argument("--seed", type=int, default=0)
    tn.add_argument("--count-per-level", type=int, default=10)
    tn.add_argument("--suite", required=True)
    tn.set_defaults(func=cmd_task_nav)

    s = sub.add_parser("serve", help="serve the TCP protocol")
    s.add_argument("--map", default=None)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=9000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vehicles", type=int, default=0)
    s.add_argument("--pedestrians", type=int, default=0)
    s.set_defaults(func=cmd_serve)

    d = sub.add_parser("render", help="render a top-down PPM raster")
    d.add_argument("--map", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--cell", type=float, default=0.5)
    d.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (CitySimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
