import random

import pytest

from citysim.catalog import Catalog
from citysim.geometry import AABB, Pose2D
from citysim.procgen import GenConfig, generate_city
from citysim.scene import Category, SceneEntity, SceneGraph


def make_worked_example_env():
    """Waypoints 0, 1, 10 with a chair by waypoint 10 at (10, 10): the
    planner worked-example topology."""
    from citysim.env import Environment, ScenarioConfig
    from citysim.procgen import RoadNetwork
    from citysim.waypoints import Waypoint, WaypointGraph, WaypointKind
    from citysim.world import World

    g = WaypointGraph()
    g.add_node(Waypoint("0", 0.0, 0.0, WaypointKind.COARSE_SIDEWALK))
    g.add_node(Waypoint("1", 5.0, 3.0, WaypointKind.COARSE_SIDEWALK))
    g.add_node(Waypoint("10", 10.0, 10.0, WaypointKind.COARSE_SIDEWALK))
    g.add_node(Waypoint("99", 40.0, 40.0, WaypointKind.COARSE_SIDEWALK))
    g.add_edge("0", "1")
    g.add_edge("1", "10")
    g.add_edge("10", "99")
    scene = SceneGraph(AABB(-5, -5, 60, 60))
    scene.insert(SceneEntity(
        id="prop_0001", category=Category.URBAN_PROP,
        footprint=AABB.from_center(10.9, 10.0, 0.5, 0.5),
        pose=Pose2D(10.9, 10.0), tags=frozenset({"chair", "sittable"})))
    world = World(scene, RoadNetwork([], []), g, g, base_seed=0)
    return Environment(ScenarioConfig(
        gen=GenConfig(), agents=[{"embodiment": "humanoid",
                                  "spawn_waypoint": "0"}]), world=world)


def random_entity(rng: random.Random, i: int, extent=400.0,
                  categories=(Category.BUILDING, Category.URBAN_PROP,
                              Category.VEGETATION)) -> SceneEntity:
    x = rng.uniform(0, extent)
    y = rng.uniform(0, extent)
    w = rng.uniform(0.5, 12.0)
    h = rng.uniform(0.5, 12.0)
    return SceneEntity(
        id=f"e_{i:04d}",
        category=rng.choice(categories),
        footprint=AABB.from_center(x, y, w, h),
        pose=Pose2D(x, y),
        tags=frozenset(rng.sample(["a", "b", "c", "landmark"], k=rng.randint(0, 2))),
        blocking=rng.random() < 0.7,
    )


@pytest.fixture
def small_city():
    cfg = GenConfig(seed=7, width=400.0, height=400.0, road_density=60.0,
                    building_density=0.8, street_element_density=0.2)
    return generate_city(cfg)


@pytest.fixture
def small_cfg():
    return GenConfig(seed=7, width=400.0, height=400.0, road_density=60.0,
                     building_density=0.8, street_element_density=0.2)
