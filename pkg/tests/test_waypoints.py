"""Waypoint graphs: lattice densities, connectivity, A* vs Dijkstra oracle."""

import heapq
import math
import random
from collections import deque

import pytest

from citysim.errors import NoPathError
from citysim.geometry import dist2d
from citysim.procgen import GenConfig, generate_city, generate_roads
from citysim.waypoints import (
    MODE_PED,
    MODE_VEH,
    Waypoint,
    WaypointGraph,
    WaypointKind,
    astar,
    astar_cost,
    build_coarse,
    build_fine,
    path_length,
)


# ---------------------------------------------------------------- oracles

def dijkstra_cost(graph: WaypointGraph, frm: str, to: str, mode: int):
    """Plain Dijkstra, no heuristic, heapq over (cost, id)."""
    dist = {frm: 0.0}
    heap = [(0.0, frm)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == to:
            return d
        for v, w in graph.arcs(u, mode):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return None


def bfs_connected(graph: WaypointGraph, ids: list, mode: int) -> bool:
    if not ids:
        return True
    seen = {ids[0]}
    dq = deque([ids[0]])
    while dq:
        u = dq.popleft()
        for v, _ in graph.arcs(u, mode):
            if v not in seen:
                seen.add(v)
                dq.append(v)
    return all(i in seen for i in ids)


@pytest.fixture(scope="module")
def city():
    cfg = GenConfig(seed=21, width=400.0, height=400.0, road_density=80.0,
                    building_density=0.7, street_element_density=0.0)
    graph, net = generate_city(cfg)
    return graph, net


# ----------------------------------------------------------------- coarse

def test_single_segment_coarse_counts():
    cfg = GenConfig(seed=1, width=1000.0, height=1000.0, road_density=100.0,
                    branch_probability=0.0, max_road_depth=1)
    net = generate_roads(cfg)
    assert len(net.segments) == 1
    coarse = build_coarse(net)
    inter = [w for w in coarse.nodes.values()
             if w.kind is WaypointKind.COARSE_INTERSECTION]
    side = [w for w in coarse.nodes.values()
            if w.kind is WaypointKind.COARSE_SIDEWALK]
    assert len(inter) == 2
    assert len(side) == 6
    assert len(coarse) == 8


def test_coarse_midpoint_is_segment_mean_offset_laterally():
    cfg = GenConfig(seed=1, width=1000.0, height=1000.0, road_density=100.0,
                    branch_probability=0.0, max_road_depth=1)
    net = generate_roads(cfg)
    seg = net.segments[0]
    coarse = build_coarse(net)
    mid = coarse.nodes[f"cs:{seg.id}:0:1"]
    mean_x = (seg.a[0] + seg.b[0]) / 2.0
    mean_y = (seg.a[1] + seg.b[1]) / 2.0
    off = seg.width / 2.0 + seg.sidewalk_width / 2.0
    nx, ny = seg.left_normal
    assert math.isclose(mid.x, mean_x + nx * off, abs_tol=1e-9)
    assert math.isclose(mid.y, mean_y + ny * off, abs_tol=1e-9)


def test_coarse_graph_connected_on_plus_network(city):
    _, net = city
    coarse = build_coarse(net)
    assert bfs_connected(coarse, sorted(coarse.nodes), MODE_PED)


# ------------------------------------------------------------------- fine

def test_fine_default_counts_per_sidewalk_and_crosswalk(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    per_sidewalk = {}
    for wp in fine.nodes.values():
        if wp.kind is WaypointKind.FINE_SIDEWALK:
            side = wp.id.split(":")[2]
            per_sidewalk.setdefault((wp.segment_id, side), []).append(wp)
    assert per_sidewalk
    for group in per_sidewalk.values():
        assert len(group) == 68  # 4 lanes x 17 waypoints
        lanes = {}
        for wp in group:
            lanes.setdefault(wp.lane_index, 0)
            lanes[wp.lane_index] += 1
        assert lanes == {0: 17, 1: 17, 2: 17, 3: 17}
    crosswalks = {}
    for wp in fine.nodes.values():
        if wp.kind is WaypointKind.FINE_CROSSWALK:
            node_id, seg_id = wp.id.split(":")[1:3]
            crosswalks.setdefault((node_id, seg_id), []).append(wp)
    assert crosswalks
    for (node_id, _), group in crosswalks.items():
        assert len(group) == 8
        assert all(wp.signal_id == f"sig:{node_id}" for wp in group)


def test_fine_edge_length_bound_with_custom_step(city):
    _, net = city
    coarse = build_coarse(net)
    step = 4.0
    fine = build_fine(net, coarse, step=step)
    for a, b, w, m in fine.all_arcs():
        wa, wb = fine.nodes[a], fine.nodes[b]
        # interpolated chain edges: same family, same segment, same chain
        fam_a, fam_b = a.split(":")[0], b.split(":")[0]
        if fam_a != fam_b or wa.segment_id != wb.segment_id:
            continue
        if (fam_a == "fs" and wa.lane_index == wb.lane_index
                and a.split(":")[2] == b.split(":")[2]):
            assert w <= step * 1.5
        if fam_a == "rl" and a.split(":")[2] == b.split(":")[2]:
            assert w <= step * 1.5


def test_fine_pedestrian_graph_connected(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    ped_ids = [w.id for w in fine.nodes.values()
               if w.kind in (WaypointKind.FINE_SIDEWALK, WaypointKind.FINE_CROSSWALK)]
    assert bfs_connected(fine, ped_ids, MODE_PED)


def test_vehicle_lane_graph_strongly_traversable(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    lane_ids = sorted(w.id for w in fine.nodes.values()
                      if w.kind is WaypointKind.ROAD_LANE)
    # every lane node can reach every other (U-turn arcs close the graph)
    rng = random.Random(4)
    for _ in range(20):
        a, b = rng.choice(lane_ids), rng.choice(lane_ids)
        assert astar(fine, a, b, mode="vehicle")


# ------------------------------------------------------------------ astar

def test_astar_from_equals_to():
    g = WaypointGraph()
    g.add_node(Waypoint("a", 0, 0, WaypointKind.FINE_CROSSWALK, signal_id="sig:x"))
    assert astar(g, "a", "a") == ["a"]


def test_astar_straight_chain():
    g = WaypointGraph()
    for i, x in enumerate((0.0, 1.0, 2.0)):
        g.add_node(Waypoint(f"n{i}", x, 0.0, WaypointKind.COARSE_INTERSECTION))
    g.add_edge("n0", "n1")
    g.add_edge("n1", "n2")
    assert astar(g, "n0", "n2") == ["n0", "n1", "n2"]


def test_astar_no_path():
    g = WaypointGraph()
    g.add_node(Waypoint("a", 0, 0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("b", 5, 5, WaypointKind.COARSE_INTERSECTION))
    with pytest.raises(NoPathError):
        astar(g, "a", "b")


def test_astar_lexicographic_tie_break():
    # two equal-cost routes: a->m1->z and a->m2->z; m1 < m2 wins
    g = WaypointGraph()
    g.add_node(Waypoint("a", 0.0, 0.0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("m1", 1.0, 1.0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("m2", 1.0, -1.0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("z", 2.0, 0.0, WaypointKind.COARSE_INTERSECTION))
    g.add_edge("a", "m1")
    g.add_edge("a", "m2")
    g.add_edge("m1", "z")
    g.add_edge("m2", "z")
    assert astar(g, "a", "z") == ["a", "m1", "z"]


def test_astar_cost_equals_dijkstra_on_city(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    ped_ids = sorted(w.id for w in fine.nodes.values()
                     if w.kind in (WaypointKind.FINE_SIDEWALK,
                                   WaypointKind.FINE_CROSSWALK))
    rng = random.Random(17)
    for _ in range(100):
        a, b = rng.choice(ped_ids), rng.choice(ped_ids)
        oracle = dijkstra_cost(fine, a, b, MODE_PED)
        if oracle is None:
            with pytest.raises(NoPathError):
                astar_cost(fine, a, b)
            continue
        cost = astar_cost(fine, a, b)
        assert cost == oracle
        path = astar(fine, a, b)
        assert path[0] == a and path[-1] == b
        assert path_length(fine, path) == cost


def test_astar_heuristic_admissible_on_samples(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    ped_ids = sorted(w.id for w in fine.nodes.values()
                     if w.kind is WaypointKind.FINE_SIDEWALK)
    rng = random.Random(5)
    for _ in range(50):
        a, b = rng.choice(ped_ids), rng.choice(ped_ids)
        wa, wb = fine.nodes[a], fine.nodes[b]
        straight = dist2d(wa.x, wa.y, wb.x, wb.y)
        true_cost = dijkstra_cost(fine, a, b, MODE_PED)
        if true_cost is not None:
            assert straight <= true_cost + 1e-9


def test_astar_vehicle_cost_matches_dijkstra(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    lane_ids = sorted(w.id for w in fine.nodes.values()
                      if w.kind is WaypointKind.ROAD_LANE)
    rng = random.Random(23)
    for _ in range(50):
        a, b = rng.choice(lane_ids), rng.choice(lane_ids)
        oracle = dijkstra_cost(fine, a, b, MODE_VEH)
        assert oracle is not None
        assert astar_cost(fine, a, b, mode="vehicle") == oracle


def test_mode_traversability_enforced(city):
    _, net = city
    coarse = build_coarse(net)
    fine = build_fine(net, coarse)
    lane = next(w.id for w in fine.nodes.values()
                if w.kind is WaypointKind.ROAD_LANE)
    side = next(w.id for w in fine.nodes.values()
                if w.kind is WaypointKind.FINE_SIDEWALK)
    with pytest.raises(NoPathError):
        astar(fine, lane, side, mode="pedestrian")
    with pytest.raises(NoPathError):
        astar(fine, side, lane, mode="vehicle")


def test_node_penalty_diverts_path():
    g = WaypointGraph()
    g.add_node(Waypoint("a", 0.0, 0.0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("m1", 1.0, 0.1, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("m2", 1.0, -3.0, WaypointKind.COARSE_INTERSECTION))
    g.add_node(Waypoint("z", 2.0, 0.0, WaypointKind.COARSE_INTERSECTION))
    g.add_edge("a", "m1")
    g.add_edge("a", "m2")
    g.add_edge("m1", "z")
    g.add_edge("m2", "z")
    assert astar(g, "a", "z") == ["a", "m1", "z"]
    assert astar(g, "a", "z", node_penalty={"m1": 10.0}) == ["a", "m2", "z"]
