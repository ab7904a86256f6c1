"""Planner: parser grammar, rule-based expansion, executor, external hook."""

import math
import random

import pytest

from citysim.env import ActionCommand, Environment, ScenarioConfig
from citysim.errors import TargetNotFoundError, UnparseableClauseError
from citysim.geometry import AABB, Pose2D, dist2d
from citysim.planner import (
    HighLevelPlan,
    Hop,
    PlanProgram,
    attach_external_executor,
    expand_rule_based,
    parse,
    tick_executor,
)
from citysim.procgen import GenConfig, RoadNetwork
from citysim.scene import Category, SceneEntity, SceneGraph
from citysim.waypoints import Waypoint, WaypointGraph, WaypointKind, astar_cost
from citysim.world import World


# ------------------------------------------------------------------ parser

def test_parse_worked_example():
    plan = parse("go to the nearest chair and sit down")
    assert [s["verb"] for s in plan.steps] == ["navigate", "sit_down"]
    target = plan.steps[0]["args"]["target"]
    assert target["category"] == "urban_prop"
    assert target["tag"] == "chair"
    assert target["qualifier"] == "nearest"


def test_parse_single_pattern():
    plan = parse("wave")
    assert [s["verb"] for s in plan.steps] == ["wave_hand"]


def test_parse_out_of_vocabulary():
    with pytest.raises(UnparseableClauseError) as err:
        parse("fly to the moon")
    assert "fly to the moon" in str(err.value)


def test_parse_reports_offending_clause():
    with pytest.raises(UnparseableClauseError) as err:
        parse("go to the nearest bench and teleport home")
    assert "teleport home" in str(err.value)


def test_parse_then_separator_and_multi():
    plan = parse("go to the nearest restaurant then wave then stop")
    assert [s["verb"] for s in plan.steps] == ["navigate", "wave_hand", "stop"]


def test_parse_every_documented_pattern():
    samples = [
        ("go to the nearest tree", ["navigate"]),
        ("sit down", ["sit_down"]),
        ("stand up", ["stand_up"]),
        ("pick up the nearest bin", ["navigate", "pick_up"]),
        ("enter the nearest car", ["navigate", "enter_car"]),
        ("wave", ["wave_hand"]),
        ("stop", ["stop"]),
        ("deliver the order", ["deliver_order"]),
        ("sit on the nearest bench", ["navigate", "sit_down"]),
        ("look up", ["look_up"]),
        ("take a photo", ["take_photo"]),
        ("do nothing", ["do_nothing"]),
    ]
    for text, verbs in samples:
        assert [s["verb"] for s in parse(text).steps] == verbs, text


def test_parse_structured_plan_equivalent():
    doc = {"steps": [
        {"verb": "navigate",
         "args": {"target": {"qualifier": "nearest", "category": "urban_prop",
                             "tag": "chair"}}},
        {"verb": "sit_down"},
    ]}
    plan = HighLevelPlan.from_dict(doc)
    assert plan.steps[0]["verb"] == "navigate"
    assert plan.steps[1]["verb"] == "sit_down"


# -------------------------------------------------- the worked-example world

from conftest import make_worked_example_env


def worked_example_env():
    return make_worked_example_env()


def run_program(env, program, max_ticks=500):
    agent = env.world.agents[program.agent_id]
    emitted = []
    for _ in range(max_ticks):
        cmd = tick_executor(program, env.world, agent)
        if cmd is None:
            if program.status != "running":
                break
            cmd = ActionCommand(program.agent_id, "do_nothing")
        emitted.append(cmd)
        env.step_sync({program.agent_id: cmd})
    return emitted


def test_worked_example_hops_and_sit():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    plan = parse("go to the nearest chair and sit down")
    program = expand_rule_based(plan, env.world, agent)
    assert program.hops == [("0", "1"), ("1", "10"), ("10", "10")]
    assert [i["verb"] for i in program.queue if not isinstance(i, Hop)] == ["sit_down"]
    run_program(env, program)
    assert program.status == "done"
    assert agent.seated
    assert math.isclose(agent.pose.x, 10.0, abs_tol=1e-6)
    assert math.isclose(agent.pose.y, 10.0, abs_tol=1e-6)


def test_sit_down_only_when_already_there():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    agent.pose = Pose2D(10.0, 10.0, 0.0)
    program = expand_rule_based(parse("sit down"), env.world, agent)
    assert [i["verb"] for i in program.queue] == ["sit_down"]
    run_program(env, program)
    assert program.status == "done" and agent.seated


def test_empty_queue_is_done_no_action():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    program = PlanProgram(agent_id="agent_0")
    assert tick_executor(program, env.world, agent) is None
    assert program.status == "done"


def test_unresolvable_target():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    plan = parse("go to the nearest hospital")
    with pytest.raises(TargetNotFoundError):
        expand_rule_based(plan, env.world, agent)


# ---------------------------------------------------- cost equals astar

@pytest.fixture(scope="module")
def city_env():
    return Environment(ScenarioConfig(
        gen=GenConfig(seed=14, width=400.0, height=400.0, road_density=70.0,
                      building_density=0.7, street_element_density=0.15),
        seed=14, agents=[{"embodiment": "humanoid"}]))


def test_compiled_cost_equals_astar_on_random_targets(city_env):
    env = city_env
    agent = env.world.agents["agent_0"]
    props = [e for e in env.world.scene.iter_entities()
             if e.category in (Category.URBAN_PROP, Category.VEGETATION,
                               Category.BUILDING)]
    rng = random.Random(77)
    checked = 0
    while checked < 30:
        target = rng.choice(props)
        plan = HighLevelPlan(steps=[
            {"verb": "navigate", "args": {"target": {"qualifier": "id",
                                                     "id": target.id}}}])
        program = expand_rule_based(plan, env.world, agent)
        start = program.hops[0][0]
        goal = program.goal_waypoint
        assert program.compiled_cost == astar_cost(env.world.fine, start, goal)
        checked += 1


def test_unobstructed_program_emits_all_legs_then_done():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    program = expand_rule_based(parse("go to the nearest chair"),
                                env.world, agent)
    n_hops = len(program.hops)

    # oracle: geometric walk predicting rotate/step counts per hop
    stride = agent.step_length(env.world.dt)
    pose = (agent.pose.x, agent.pose.y, agent.pose.yaw)
    predicted = 0
    for frm, to in program.hops:
        wp = env.world.fine.nodes[to]
        d = dist2d(pose[0], pose[1], wp.x, wp.y)
        if d <= 1e-6:
            continue
        desired = math.atan2(wp.y - pose[1], wp.x - pose[0])
        if abs(desired - pose[2]) > 1e-9:
            predicted += 1  # one exact rotation
        predicted += math.ceil(d / stride)
        pose = (wp.x, wp.y, desired)

    emitted = run_program(env, program)
    assert program.status == "done"
    assert len(emitted) == predicted
    assert n_hops == 3


def test_blockade_fails_stuck_after_two_replans():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    program = expand_rule_based(parse("go to the nearest chair"),
                                env.world, agent)
    # wall off everything ahead mid-run
    run = 0
    for _ in range(3):
        cmd = tick_executor(program, env.world, agent)
        env.step_sync({"agent_0": cmd or ActionCommand("agent_0", "do_nothing")})
        run += 1
    env.world.scene.insert(SceneEntity(
        id="wall_0001", category=Category.BUILDING,
        footprint=AABB(1.0, -5.0, 60.0, 60.0),
        pose=Pose2D(30.0, 27.0), tags=frozenset()))
    for _ in range(100):
        cmd = tick_executor(program, env.world, agent)
        if program.status != "running":
            break
        env.step_sync({"agent_0": cmd or ActionCommand("agent_0", "do_nothing")})
    assert program.status == "failed:stuck"


# ------------------------------------------------------- external executor

def test_external_executor_replays_rule_based_choices():
    env1 = worked_example_env()
    agent1 = env1.world.agents["agent_0"]
    program1 = expand_rule_based(parse("go to the nearest chair and sit down"),
                                 env1.world, agent1)
    script = run_program(env1, program1)
    trajectory1 = (agent1.pose.x, agent1.pose.y, agent1.seated)

    env2 = worked_example_env()
    agent2 = env2.world.agents["agent_0"]
    queue = list(script)

    def endpoint(agent):
        if not queue:
            return ActionCommand(agent.id, "__done__")
        return queue.pop(0)

    program2 = attach_external_executor(PlanProgram(agent_id="agent_0"), endpoint)
    run_program(env2, program2, max_ticks=len(script) + 5)
    trajectory2 = (agent2.pose.x, agent2.pose.y, agent2.seated)
    assert trajectory1 == trajectory2


def test_external_executor_timeout():
    env = worked_example_env()
    program = attach_external_executor(PlanProgram(agent_id="agent_0"),
                                       lambda agent: None, timeout_ticks=5)
    agent = env.world.agents["agent_0"]
    for _ in range(5):
        assert tick_executor(program, env.world, agent) is None
    assert program.status == "failed:executor_timeout"


def test_external_invalid_verb_keeps_program_running():
    env = worked_example_env()
    agent = env.world.agents["agent_0"]
    sent = {"n": 0}

    def endpoint(a):
        sent["n"] += 1
        if sent["n"] == 1:
            return ActionCommand("agent_0", "throttle", {"u": 0.5})  # wrong embodiment
        return ActionCommand("agent_0", "__done__")

    program = attach_external_executor(PlanProgram(agent_id="agent_0"), endpoint)
    cmd = tick_executor(program, env.world, agent)
    fb = env.execute_primitive(cmd)
    assert fb.outcome == "invalid"
    assert program.status == "running"
    tick_executor(program, env.world, agent)
    assert program.status == "done"


def test_attach_requires_endpoint():
    from citysim.errors import EndpointUnavailableError
    with pytest.raises(EndpointUnavailableError):
        attach_external_executor(PlanProgram(agent_id="a"), None)
