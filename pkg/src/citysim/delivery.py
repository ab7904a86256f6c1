"""Urban delivery economy: orders, lowest-bid auctions, pickup/delivery,
sharing with revenue split, energy and money dynamics, and the metric ledger.

Money is integer cents throughout so per-agent conservation
M_T - M_0 = sum(R_t - C_t) holds exactly. Every credit and debit flows
through the ledger, which also keeps the raw series the metrics are
recomputed from.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from typing import Optional

from .env import ActionCommand, AgentState, Environment, Feedback
from .errors import (
    InsufficientFundsError,
    OutOfRangeError,
    WrongStateError,
)
from .geometry import dist2d
from .planner import (Hop, PlanProgram, compile_route,
                      free_waypoint_near, tick_executor)
from .scene import Category
from .seeding import make_rng
from .waypoints import PEDESTRIAN_KINDS, WaypointKind, astar_cost, path_length
from .world import Event

INTERACT_RANGE = 1.5


@dataclass(frozen=True)
class EconomyConfig:
    initial_money: float = 20.0
    hunger_rate: float = 0.9            # Bernoulli per restaurant per window
    order_window: int = 50              # ticks
    scooter_price: float = 30.0
    scooter_speed_multiplier: float = 2.0
    drink_price: float = 2.0
    drink_energy: float = 20.0
    energy_max: float = 100.0
    v_min: float = 1.0
    v_max: float = 5.0
    energy_c0: float = 0.01             # f(v) = c0 + c1 * v^2, per second
    energy_c1: float = 0.002
    late_penalty: float = 1.0
    max_concurrent_orders: int = 1
    reward_alpha: float = 2.0           # base_reward = alpha + beta * distance
    reward_beta: float = 0.05
    deadline_gamma: float = 3.0         # deadline = gamma * distance / v_min

    def validate(self):
        if self.drink_price < 0 or self.scooter_price < 0 or self.late_penalty < 0:
            raise OutOfRangeError("prices must be non-negative")
        if not (0.0 <= self.hunger_rate <= 1.0):
            raise OutOfRangeError("hunger_rate must be in [0, 1]")
        if self.v_min > self.v_max:
            raise OutOfRangeError("v_min must not exceed v_max")


ORDER_STATES = ("open", "bid_phase", "assigned", "picked_up", "delivered", "failed")
_TRANSITIONS = {
    ("open", "bid_phase"), ("bid_phase", "assigned"), ("bid_phase", "open"),
    ("assigned", "picked_up"), ("picked_up", "delivered"),
    ("open", "failed"), ("bid_phase", "failed"), ("assigned", "failed"),
    ("picked_up", "failed"),
}


@dataclass
class Order:
    id: str
    pickup: str                 # waypoint id
    dropoff: str
    base_reward_cents: int
    deadline: int               # tick
    created: int
    distance: float
    state: str = "bid_phase"
    winning_bid_cents: int = 0
    assigned_to: Optional[str] = None
    carried_by: Optional[str] = None
    shared: Optional[dict] = None   # {publisher, meet_point, helper}

    def transition(self, new_state: str) -> None:
        if (self.state, new_state) not in _TRANSITIONS:
            raise WrongStateError(f"{self.id}: {self.state} -> {new_state}")
        self.state = new_state


@dataclass(frozen=True)
class Bid:
    order_id: str
    agent_id: str
    price_cents: int
    tick: int


class DeliveryLedger:
    """Per-agent money/energy series and the metric input sets."""

    def __init__(self):
        self.m0_cents: dict = {}
        self.revenue: dict = {}      # agent -> [(tick, cents)]
        self.cost: dict = {}
        self.energy_spent: dict = {}  # agent -> [(tick, units)]
        self.o_bid: dict = {}
        self.o_succ: dict = {}
        self.o_delay: dict = {}
        self.o_shared_succ: dict = {}
        self.investments: dict = {}  # agent -> count of successful buys

    def track(self, agent_id: str, m0_cents: int) -> None:
        self.m0_cents[agent_id] = m0_cents
        self.revenue[agent_id] = []
        self.cost[agent_id] = []
        self.energy_spent[agent_id] = []
        self.o_bid[agent_id] = set()
        self.o_succ[agent_id] = set()
        self.o_delay[agent_id] = set()
        self.o_shared_succ[agent_id] = set()
        self.investments[agent_id] = 0

    def agents(self):
        return sorted(self.m0_cents)

    def net_cents(self, agent_id: str) -> int:
        return (sum(c for _, c in self.revenue[agent_id])
                - sum(c for _, c in self.cost[agent_id]))

    def energy_total(self, agent_id: str) -> float:
        return sum(e for _, e in self.energy_spent[agent_id])


class DeliveryTask:
    """Owns orders, auctions, and per-tick economy; hooks into the env."""

    def __init__(self, env: Environment, cfg: EconomyConfig = EconomyConfig(),
                 seed: Optional[int] = None):
        cfg.validate()
        self.env = env
        self.cfg = cfg
        self.world = env.world
        self.ledger = DeliveryLedger()
        self.orders: dict = {}
        self.bids: dict = {}         # order_id -> [Bid]
        self.active: set = set()     # non-terminal order ids
        self.in_bid: set = set()     # subset of active, state == bid_phase
        self.by_agent: dict = {}     # agent -> order ids assigned/carried
        self._order_counter = 0
        self._last_pos: dict = {}
        seed = self.world.base_seed if seed is None else seed
        self.order_rng = make_rng(seed, "orders")
        self.restaurants = self._front_waypoints("restaurant")
        self.landmarks = self._front_waypoints("landmark")
        for aid in sorted(self.world.agents):
            agent = self.world.agents[aid]
            agent.money_cents = round(cfg.initial_money * 100)
            agent.energy = cfg.energy_max
            agent.speed = cfg.v_min
            agent.speed_stride = True
            agent.stride_multiplier = cfg.scooter_speed_multiplier
            self.ledger.track(aid, agent.money_cents)
            self.by_agent[aid] = set()
            self._last_pos[aid] = (agent.pose.x, agent.pose.y)
        env.tick_hooks.append(self._on_tick)
        for verb in ("bid_order", "pick_up_order", "deliver_order",
                     "share_order", "accept_share", "cancel_share",
                     "purchase_scooter", "purchase_drinks", "adjust_speed"):
            env.register_verb(verb, getattr(self, f"_verb_{verb}"))

    # ------------------------------------------------------------- helpers

    def _front_waypoints(self, tag: str) -> list:
        """(building_id, waypoint_id) per tagged building, sorted by id."""
        out = []
        for e in self.world.scene.iter_entities():
            if e.category is Category.BUILDING and tag in e.tags:
                cx, cy = e.footprint.center
                wp = self.world.fine.nearest_node(
                    cx, cy, kinds={WaypointKind.FINE_SIDEWALK})
                out.append((e.id, wp.id))
        return out

    def _log(self, kind: str, agent_id: Optional[str], payload: dict) -> None:
        self.world.events.append(Event(self.world.tick, agent_id, kind, payload))

    def _credit(self, agent: AgentState, cents: int) -> None:
        agent.money_cents += cents
        self.ledger.revenue[agent.id].append((self.world.tick, cents))

    def _debit(self, agent: AgentState, cents: int) -> None:
        if cents > agent.money_cents:
            raise InsufficientFundsError(agent.id)
        agent.money_cents -= cents
        self.ledger.cost[agent.id].append((self.world.tick, cents))

    def _carried_count(self, agent_id: str) -> int:
        return len(self.by_agent.get(agent_id, ()))

    def _retire(self, order: Order) -> None:
        self.active.discard(order.id)
        self.in_bid.discard(order.id)
        for ids in self.by_agent.values():
            ids.discard(order.id)

    def _near_waypoint(self, agent: AgentState, wp_id: str) -> bool:
        wp = self.world.fine.nodes[wp_id]
        return dist2d(agent.pose.x, agent.pose.y, wp.x, wp.y) <= INTERACT_RANGE

    # ------------------------------------------------------------- spawning

    def _spawn_orders(self, tick: int) -> list:
        spawned = []
        draws = sample_order_spawns(self.order_rng, len(self.restaurants),
                                    self.cfg.hunger_rate)
        for (bldg_id, pickup_wp), hungry in zip(self.restaurants, draws):
            if not hungry:
                continue
            drop_idx = self.order_rng.randrange(len(self.landmarks))
            dropoff_wp = self.landmarks[drop_idx][1]
            if dropoff_wp == pickup_wp:
                continue
            try:
                distance = astar_cost(self.world.fine, pickup_wp, dropoff_wp)
            except Exception:
                continue
            self._order_counter += 1
            oid = f"order_{self._order_counter:04d}"
            reward = self.cfg.reward_alpha + self.cfg.reward_beta * distance
            deadline = tick + max(1, round(
                self.cfg.deadline_gamma * distance
                / (self.cfg.v_min * self.world.dt)))
            order = Order(
                id=oid, pickup=pickup_wp, dropoff=dropoff_wp,
                base_reward_cents=round(reward * 100),
                deadline=deadline, created=tick, distance=distance,
            )
            self.orders[oid] = order
            self.bids[oid] = []
            self.active.add(oid)
            self.in_bid.add(oid)
            spawned.append(order)
            self._log("order_event", None,
                      {"order": oid, "event": "spawned", "pickup": pickup_wp,
                       "dropoff": dropoff_wp,
                       "reward": order.base_reward_cents})
        return spawned

    # ------------------------------------------------------------- auction

    def resolve_auction(self, order: Order, bids: list) -> Order:
        """Lowest price wins; ties by earliest tick then smallest agent id.
        Winners at capacity are skipped for the next-lowest."""
        if order.state != "bid_phase":
            raise WrongStateError(f"{order.id} not in bid_phase")
        valid = [b for b in bids
                 if 0 <= b.price_cents <= order.base_reward_cents]
        for b in sorted(valid, key=lambda b: (b.price_cents, b.tick, b.agent_id)):
            if self._carried_count(b.agent_id) < self.cfg.max_concurrent_orders:
                order.transition("assigned")
                order.assigned_to = b.agent_id
                order.winning_bid_cents = b.price_cents
                self.in_bid.discard(order.id)
                self.by_agent.setdefault(b.agent_id, set()).add(order.id)
                self._log("order_event", b.agent_id,
                          {"order": order.id, "event": "assigned",
                           "price": b.price_cents})
                return order
        order.transition("open")  # no valid bids: retry next window
        self.in_bid.discard(order.id)
        return order

    # ------------------------------------------------------------ tick hook

    def _on_tick(self, world) -> None:
        tick = world.tick
        cfg = self.cfg
        if tick % cfg.order_window == 0:
            for oid in sorted(self.active):
                order = self.orders[oid]
                if order.state == "bid_phase" and tick >= order.created + cfg.order_window:
                    self.resolve_auction(order, self.bids[oid])
                elif order.state == "open":
                    order.transition("bid_phase")
                    order.created = tick
                    self.in_bid.add(oid)
            self._spawn_orders(tick)
        # deadlines
        for oid in sorted(self.active):
            order = self.orders[oid]
            if order.state in ("open", "bid_phase", "assigned") and tick > order.deadline:
                order.transition("failed")
                self._retire(order)
                self._log("order_event", order.assigned_to,
                          {"order": oid, "event": "failed", "reason": "deadline"})
        # shared-order handoff at the meet point
        for oid in sorted(self.active):
            order = self.orders[oid]
            sh = order.shared
            if (sh is not None and sh.get("helper") and order.state == "picked_up"
                    and order.carried_by == sh["publisher"]):
                pub = self.world.agents.get(sh["publisher"])
                helper = self.world.agents.get(sh["helper"])
                if pub is None or helper is None:
                    continue
                if (self._near_waypoint(pub, sh["meet_point"])
                        and self._near_waypoint(helper, sh["meet_point"])):
                    order.carried_by = sh["helper"]
                    self._log("order_event", sh["helper"],
                              {"order": oid, "event": "handoff"})
        # energy: each moving agent pays f(v) * dt
        for aid in sorted(self.world.agents):
            agent = self.world.agents[aid]
            last = self._last_pos[aid]
            moved = dist2d(last[0], last[1], agent.pose.x, agent.pose.y)
            self._last_pos[aid] = (agent.pose.x, agent.pose.y)
            if moved > 0.0:
                v = moved / world.dt
                burn = (cfg.energy_c0 + cfg.energy_c1 * v * v) * world.dt
                actual = min(agent.energy, burn)
                agent.energy -= actual
                if actual > 0.0:
                    self.ledger.energy_spent[aid].append((tick, actual))
            if agent.energy <= 0.0:
                agent.energy = 0.0
                agent.speed = cfg.v_min  # exhaustion forces minimum speed

    # ------------------------------------------------------- economy verbs

    def _order_or_none(self, args) -> Optional[Order]:
        return self.orders.get(args.get("order", ""))

    def _verb_bid_order(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        if order is None or order.state != "bid_phase":
            return Feedback("bid_order", "invalid", reason="wrong_state")
        price_cents = round(float(args.get("price", 0.0)) * 100)
        if price_cents < 0 or price_cents > order.base_reward_cents:
            return Feedback("bid_order", "invalid", reason="out_of_range")
        self.bids[order.id].append(Bid(order.id, agent.id, price_cents,
                                       self.world.tick))
        self.ledger.o_bid[agent.id].add(order.id)
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "bid", "price": price_cents})
        return Feedback("bid_order", "ok")

    def _verb_pick_up_order(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        if order is None or order.state != "assigned" or order.assigned_to != agent.id:
            return Feedback("pick_up_order", "invalid", reason="wrong_state")
        if agent.energy <= 0.0:
            return Feedback("pick_up_order", "invalid", reason="exhausted")
        if not self._near_waypoint(agent, order.pickup):
            return Feedback("pick_up_order", "invalid", reason="out_of_range")
        order.transition("picked_up")
        order.carried_by = agent.id
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "picked_up"})
        return Feedback("pick_up_order", "ok")

    def _verb_deliver_order(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        if order is None or order.state != "picked_up" or order.carried_by != agent.id:
            return Feedback("deliver_order", "invalid", reason="wrong_state")
        if not self._near_waypoint(agent, order.dropoff):
            return Feedback("deliver_order", "invalid", reason="out_of_range")
        order.transition("delivered")
        self._retire(order)
        tick = self.world.tick
        late = tick > order.deadline
        net = order.winning_bid_cents
        if late:
            net = max(0, net - round(self.cfg.late_penalty * 100))
        publisher_id = order.assigned_to
        publisher = self.world.agents[publisher_id]
        if order.shared is not None and order.shared.get("helper"):
            helper = self.world.agents[order.shared["helper"]]
            helper_share = net // 2
            self._credit(publisher, net - helper_share)
            self._credit(helper, helper_share)
            self.ledger.o_shared_succ[publisher.id].add(order.id)
            self.ledger.o_shared_succ[helper.id].add(order.id)
        else:
            self._credit(publisher, net)
        self.ledger.o_succ[publisher_id].add(order.id)
        if late:
            self.ledger.o_delay[publisher_id].add(order.id)
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "delivered", "late": late,
                   "net": net})
        return Feedback("deliver_order", "ok")

    def _verb_share_order(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        if (order is None or order.assigned_to != agent.id
                or order.state not in ("assigned", "picked_up")
                or order.shared is not None):
            return Feedback("share_order", "invalid", reason="wrong_state")
        meet = args.get("meet_point")
        if meet not in self.world.fine.nodes:
            return Feedback("share_order", "invalid", reason="invalid_target")
        order.shared = {"publisher": agent.id, "meet_point": meet, "helper": None}
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "shared", "meet_point": meet})
        return Feedback("share_order", "ok")

    def _verb_accept_share(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        if (order is None or order.shared is None
                or order.shared.get("helper") is not None
                or order.shared["publisher"] == agent.id):
            return Feedback("accept_share", "invalid", reason="wrong_state")
        order.shared["helper"] = agent.id
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "share_accepted"})
        return Feedback("accept_share", "ok")

    def _verb_cancel_share(self, agent: AgentState, args) -> Feedback:
        order = self._order_or_none(args)
        handed_off = (order is not None and order.shared is not None
                      and order.shared.get("helper") is not None
                      and order.carried_by == order.shared["helper"])
        if (order is None or order.shared is None
                or order.shared["publisher"] != agent.id or handed_off):
            return Feedback("cancel_share", "invalid", reason="wrong_state")
        order.shared = None
        self._log("order_event", agent.id,
                  {"order": order.id, "event": "share_cancelled"})
        return Feedback("cancel_share", "ok")

    def _verb_purchase_scooter(self, agent: AgentState, args) -> Feedback:
        price = round(self.cfg.scooter_price * 100)
        if any(i.get("name") == "scooter" for i in agent.inventory):
            return Feedback("purchase_scooter", "invalid", reason="wrong_state")
        if agent.money_cents < price:
            return Feedback("purchase_scooter", "invalid",
                            reason="insufficient_funds")
        self._debit(agent, price)
        agent.inventory.append({"kind": "gear", "name": "scooter"})
        agent.riding_scooter = True
        self.ledger.investments[agent.id] += 1
        self._log("purchase", agent.id, {"item": "scooter", "price": price})
        return Feedback("purchase_scooter", "ok")

    def _verb_purchase_drinks(self, agent: AgentState, args) -> Feedback:
        price = round(self.cfg.drink_price * 100)
        if agent.money_cents < price:
            return Feedback("purchase_drinks", "invalid",
                            reason="insufficient_funds")
        self._debit(agent, price)
        agent.energy = min(self.cfg.energy_max,
                           agent.energy + self.cfg.drink_energy)
        self._log("purchase", agent.id, {"item": "drink", "price": price})
        return Feedback("purchase_drinks", "ok")

    def _verb_adjust_speed(self, agent: AgentState, args) -> Feedback:
        v = args.get("v")
        if not isinstance(v, (int, float)) or not (self.cfg.v_min <= v <= self.cfg.v_max):
            return Feedback("adjust_speed", "invalid", reason="out_of_range")
        agent.speed = self.cfg.v_min if agent.energy <= 0.0 else float(v)
        return Feedback("adjust_speed", "ok")

    # ---------------------------------------------------------- navigation

    def lane_spread_target(self, agent_id: str, waypoint_id: str) -> str:
        """Same lateral group, lane picked by agent hash: couriers heading
        to one pickup spread across the sidewalk instead of stacking. Only
        lanes within two of the original stay inside the interact range."""
        parts = waypoint_id.split(":")
        if len(parts) != 5 or parts[0] != "fs":
            return waypoint_id
        from .seeding import derive_seed
        orig = int(parts[3])
        allowed = [k for k in range(4) if abs(k - orig) <= 2]
        lane = allowed[derive_seed(0, "lane", agent_id) % len(allowed)]
        candidate = ":".join([parts[0], parts[1], parts[2], str(lane), parts[4]])
        return candidate if candidate in self.world.fine.nodes else waypoint_id

    def navigate_program(self, agent: AgentState, waypoint_id: str,
                         terminal: Optional[dict] = None) -> PlanProgram:
        """Hops to a waypoint plus an optional terminal economy primitive."""
        waypoint_id = self.lane_spread_target(agent.id, waypoint_id)
        wp = self.world.fine.nodes[waypoint_id]
        body = self.world.agent_footprint(agent)
        slot = free_waypoint_near(self.world, wp.x, wp.y,
                                  set(PEDESTRIAN_KINDS),
                                  body.width, body.height)
        waypoint_id = slot.id
        start = self.world.fine.nearest_node(
            agent.pose.x, agent.pose.y, kinds=set(PEDESTRIAN_KINDS))
        program = PlanProgram(agent_id=agent.id)
        path = compile_route(self.world, agent, start.id, waypoint_id,
                             "pedestrian", program._penalties)
        hops = [Hop(a, b) for a, b in zip(path, path[1:])]
        hops.append(Hop(path[-1], path[-1]))
        program.queue.extend(hops)
        program.hops.extend((h.frm, h.to) for h in hops)
        program.compiled_cost = path_length(self.world.fine, path)
        program.goal_waypoint = waypoint_id
        if terminal is not None:
            program.queue.append(terminal)
        return program


def sample_order_spawns(rng, n_restaurants: int, hunger_rate: float) -> list:
    """One Bernoulli(hunger_rate) draw per restaurant, in restaurant order."""
    return [rng.random() < hunger_rate for _ in range(n_restaurants)]


# -------------------------------------------------------------- metrics

def compute_delivery_metrics(ledger: DeliveryLedger, agents: dict) -> dict:
    """P, SR, DR, EE, SH, IN per agent plus population mean/std per metric.

    Undefined ratios (empty denominators) are reported as None and skipped
    in the aggregates.
    """
    per_agent = {}
    for aid in ledger.agents():
        profit = (agents[aid].money_cents - ledger.m0_cents[aid]) / 100.0
        n_bid = len(ledger.o_bid[aid])
        n_succ = len(ledger.o_succ[aid])
        n_delay = len(ledger.o_delay[aid])
        energy = ledger.energy_total(aid)
        per_agent[aid] = {
            "profit": profit,
            "successful_orders": n_succ,
            "order_success_rate": (n_succ / n_bid) if n_bid else None,
            "delay_rate": (n_delay / n_succ) if n_succ else None,
            "energy_efficiency": (profit / energy) if energy > 0 else None,
            "sharing_count": len(ledger.o_shared_succ[aid]),
            "investment_count": ledger.investments[aid],
        }
    metrics = ["profit", "successful_orders", "order_success_rate",
               "delay_rate", "energy_efficiency", "sharing_count",
               "investment_count"]
    avg, std = {}, {}
    for m in metrics:
        values = [per_agent[a][m] for a in per_agent if per_agent[a][m] is not None]
        avg[m] = statistics.fmean(values) if values else None
        std[m] = statistics.pstdev(values) if len(values) > 1 else (0.0 if values else None)
    return {"per_agent": per_agent, "avg": avg, "std": std}


CSV_COLUMNS = ["model", "agent_id", "profit", "successful_orders",
               "energy_efficiency", "sharing_count", "investment_count"]


def metrics_to_csv(report: dict, model: str = "scripted") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)

    def row(agent_id, source):
        def fmt(v):
            return "" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)
        writer.writerow([model, agent_id, fmt(source["profit"]),
                         fmt(source["successful_orders"]),
                         fmt(source["energy_efficiency"]),
                         fmt(source["sharing_count"]),
                         fmt(source["investment_count"])])

    for aid in sorted(report["per_agent"]):
        row(aid, report["per_agent"][aid])
    row("Avg", report["avg"])
    row("Std", report["std"])
    return buf.getvalue()


def order_events_jsonl(world) -> str:
    lines = [json.dumps(e.to_dict(), separators=(",", ":"))
             for e in world.events.records
             if e.kind in ("order_event", "purchase")]
    return "\n".join(lines)


# ---------------------------------------------------------- scripted agent

class GreedyCourier:
    """Deterministic scripted policy: bid cheap, fetch, deliver, refuel.

    Per-agent price factors are derived from the id hash so simultaneous
    bids stay distinct and auctions resolve non-trivially.
    """

    VISIBLE_ORDERS = 10

    def __init__(self, task: DeliveryTask, agent_id: str,
                 buy_scooter: bool = False, travel_speed: float = 3.0):
        self.task = task
        self.agent_id = agent_id
        self.buy_scooter = buy_scooter
        self.travel_speed = travel_speed
        self.program: Optional[PlanProgram] = None
        self._did_set_speed = False
        self._sidesteps = 0
        from .seeding import derive_seed, make_rng
        self.rng = make_rng(task.world.base_seed, "courier", agent_id)
        self.price_factor = 0.6 + (derive_seed(0, "bid", agent_id) % 30) / 100.0

    def _act(self, verb, **args):
        return ActionCommand(self.agent_id, verb, args)

    def decide(self, world) -> ActionCommand:
        task = self.task
        agent = world.agents[self.agent_id]
        cfg = task.cfg

        if not self._did_set_speed:
            self._did_set_speed = True
            return self._act("adjust_speed", v=self.travel_speed)
        if (agent.energy < 25.0
                and agent.money_cents >= round(cfg.drink_price * 100)):
            return self._act("purchase_drinks")
        if (self.buy_scooter and not agent.riding_scooter
                and agent.money_cents >= round((cfg.scooter_price + 10.0) * 100)):
            return self._act("purchase_scooter")

        side_verb = "move_left" if self.price_factor < 0.75 else "move_right"
        if self._sidesteps > 0:
            self._sidesteps -= 1
            return self._act(side_verb)
        if self.program is not None and self.program.status == "running":
            fb = agent.last_feedback
            if (fb is not None and fb.outcome == "blocked"
                    and fb.collision in ("humanoid", "robot", "pedestrian")
                    and self.rng.random() < 0.5):
                # randomized backoff: yield this tick instead of replanning,
                # so mirrored head-on encounters desynchronize
                return self._act("do_nothing")
            cmd = tick_executor(self.program, world, agent)
            if cmd is not None:
                return cmd
        if self.program is not None and self.program.failed:
            # jammed against another courier: side-step twice to clear a
            # full body width before planning again
            self.program = None
            self._sidesteps = 1
            return self._act(side_verb)
        self.program = None

        mine = [task.orders[oid]
                for oid in sorted(task.by_agent.get(self.agent_id, ()))]
        for order in mine:
            if order.state == "picked_up" and order.carried_by == self.agent_id:
                if task._near_waypoint(agent, order.dropoff):
                    return self._act("deliver_order", order=order.id)
                self.program = task.navigate_program(
                    agent, order.dropoff,
                    {"verb": "deliver_order", "args": {"order": order.id}})
                return tick_executor(self.program, world, agent) or \
                    self._act("do_nothing")
            if order.state == "assigned":
                if task._near_waypoint(agent, order.pickup):
                    return self._act("pick_up_order", order=order.id)
                self.program = task.navigate_program(
                    agent, order.pickup,
                    {"verb": "pick_up_order", "args": {"order": order.id}})
                return tick_executor(self.program, world, agent) or \
                    self._act("do_nothing")

        if task._carried_count(self.agent_id) < cfg.max_concurrent_orders:
            open_orders = sorted(
                (task.orders[oid] for oid in task.in_bid
                 if not any(b.agent_id == self.agent_id
                            for b in task.bids[oid])),
                key=lambda o: (-o.base_reward_cents, o.id))[:self.VISIBLE_ORDERS]
            if open_orders:
                order = open_orders[0]
                price = order.base_reward_cents * self.price_factor / 100.0
                return self._act("bid_order", order=order.id, price=price)
        # courteous idle: don't stand in a working courier's way
        for oid, fp in world.dynamic_footprints(exclude=self.agent_id):
            if fp.min_dist_to_point(agent.pose.x, agent.pose.y) <= 1.0:
                side = "move_left" if self.price_factor < 0.75 else "move_right"
                return self._act(side)
        return self._act("do_nothing")


def run_delivery_episode(env: Environment, cfg: EconomyConfig,
                         ticks: int = 5000, scooter_every: int = 2) -> tuple:
    """Scripted multi-agent episode; returns (task, metrics report)."""
    task = DeliveryTask(env, cfg)
    policies = {}
    for i, aid in enumerate(sorted(env.world.agents)):
        policies[aid] = GreedyCourier(task, aid,
                                      buy_scooter=(i % scooter_every == 0))
    for _ in range(ticks):
        actions = {aid: policies[aid].decide(env.world)
                   for aid in sorted(env.world.agents)}
        env.advance(actions)
    report = compute_delivery_metrics(task.ledger, env.world.agents)
    return task, report
