"""Deterministic discrete-event simulation of a dumbbell SDN network.

Links only add fixed latency. Switches look packets up in a priority
ordered flow table and forward, drop, or hand them to the controller.
Simultaneous events fire in insertion order.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

log = logging.getLogger(__name__)

CONTROLLER = "controller"


class BadSize(ValueError):
    pass


class DuplicateRule(ValueError):
    pass


@dataclass(frozen=True)
class Forward:
    port: str

    def describe(self) -> str:
        return f"forward:{self.port}"


@dataclass(frozen=True)
class RedirectToController:
    def describe(self) -> str:
        return "redirect"


@dataclass(frozen=True)
class Drop:
    def describe(self) -> str:
        return "drop"


Action = Union[Forward, RedirectToController, Drop]


@dataclass(frozen=True)
class Match:
    src: Optional[str] = None
    dst: Optional[str] = None

    @property
    def specificity(self) -> int:
        return (self.src is not None) + (self.dst is not None)

    def matches(self, src: str, dst: str) -> bool:
        return (self.src is None or self.src == src) and (self.dst is None or self.dst == dst)


@dataclass(frozen=True)
class FlowRule:
    priority: int
    match: Match
    action: Action
    cookie: str = "default"

    def describe(self) -> str:
        return f"{self.cookie}/{self.priority}/{self.match.src or '*'}>{self.match.dst or '*'}/{self.action.describe()}"


class FlowTable:
    def __init__(self):
        self.rules: list[FlowRule] = []
        self.hits: Counter = Counter()

    @staticmethod
    def _order(rule: FlowRule):
        return (-rule.priority, -rule.match.specificity)

    def install(self, rule: FlowRule) -> None:
        if any(r.priority == rule.priority and r.match == rule.match for r in self.rules):
            raise DuplicateRule(f"rule with priority {rule.priority} and match {rule.match} exists")
        self.rules.append(rule)
        # stable sort keeps installation order among identical keys
        self.rules.sort(key=self._order)

    def remove_by_cookie(self, cookie: str) -> int:
        before = len(self.rules)
        self.rules = [r for r in self.rules if r.cookie != cookie]
        return before - len(self.rules)

    def lookup(self, src: str, dst: str) -> Optional[FlowRule]:
        for rule in self.rules:
            if rule.match.matches(src, dst):
                self.hits[rule] += 1
                return rule
        return None

    def serialize(self) -> bytes:
        rows = [
            {"priority": r.priority, "src": r.match.src, "dst": r.match.dst, "action": r.action.describe(), "cookie": r.cookie}
            for r in self.rules
        ]
        return json.dumps(rows, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class Switch:
    name: str
    table: FlowTable = field(default_factory=FlowTable)


@dataclass
class Packet:
    id: int
    src: str
    dst: str
    octets: bytes
    sent_at: float
    tags: dict = field(default_factory=dict)


@dataclass
class Topology:
    left: list[str]
    right: list[str]
    switches: dict[str, Switch]
    access_latency: float
    core_latency: float
    controller_latency: float
    # node -> switch name
    attachment: dict[str, str]
    addresses: dict[str, int]

    @property
    def nodes(self) -> list[str]:
        return self.left + self.right

    @property
    def links(self) -> list[tuple[str, str, float]]:
        out = [(n, self.attachment[n], self.access_latency) for n in self.nodes]
        out.append(("s_left", "s_right", self.core_latency))
        return out

    def node_by_address(self, address: int) -> Optional[str]:
        for node, a in self.addresses.items():
            if a == address:
                return node
        return None

    def link_latency(self, a: str, b: str) -> float:
        if a in self.switches and b in self.switches:
            return self.core_latency
        return self.access_latency

    def path_latency(self, src: str, dst: str) -> float:
        hops = self.access_latency * 2
        if self.attachment[src] != self.attachment[dst]:
            hops += self.core_latency
        return hops


def build_dumbbell(n_left: int, n_right: int, access_latency: float = 0.001, core_latency: float = 0.005, controller_latency: float | None = None) -> Topology:
    """Masters ``m0..`` on the left switch, outstations ``o0..`` on the right, one core link between."""
    if n_left < 1 or n_right < 1:
        raise BadSize("each side of the dumbbell needs at least one node")
    if min(access_latency, core_latency) < 0:
        raise BadSize("latencies must be non-negative")
    left = [f"m{i}" for i in range(n_left)]
    right = [f"o{i}" for i in range(n_right)]
    switches = {"s_left": Switch("s_left"), "s_right": Switch("s_right")}
    attachment = {n: "s_left" for n in left} | {n: "s_right" for n in right}
    # masters take DNP3 addresses from 1, outstations from 1024
    addresses = {n: 1 + i for i, n in enumerate(left)} | {n: 1024 + i for i, n in enumerate(right)}
    topo = Topology(left, right, switches, access_latency, core_latency, access_latency if controller_latency is None else controller_latency, attachment, addresses)
    for sw in switches.values():
        for node in topo.nodes:
            port = node if attachment[node] == sw.name else ("s_right" if sw.name == "s_left" else "s_left")
            sw.table.install(FlowRule(1, Match(dst=node), Forward(port), "default"))
    return topo


@dataclass(order=True)
class _Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())


class EventLog:
    """JSONL records kept in memory in emission order."""

    def __init__(self):
        self.records: list[dict] = []

    def emit(self, record: dict) -> None:
        self.records.append(record)

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")


class Simulator:
    """Single-threaded event loop over a :class:`Topology`.

    Nodes are registered with :meth:`attach` and receive packets through
    ``node.receive(sim, packet)``. The controller receives redirected
    packets through ``controller.on_packet_in(sim, packet, switch)`` and
    can watch every switch traversal through ``monitors``.
    """

    def __init__(self, topology: Topology, event_log: EventLog | None = None):
        self.topology = topology
        self.now = 0.0
        self.log = event_log if event_log is not None else EventLog()
        self.nodes: dict[str, Any] = {}
        self.controller = None
        self.monitors: list[Callable] = []
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self._packet_ids = itertools.count(1)
        self.counters = Counter()
        self.delivered_to: Counter = Counter()
        self.events_processed = 0

    # -- wiring -----------------------------------------------------------
    def attach(self, node_id: str, node) -> None:
        if node_id not in self.topology.attachment:
            raise KeyError(f"unknown node {node_id}")
        self.nodes[node_id] = node

    def set_controller(self, controller) -> None:
        self.controller = controller

    # -- scheduling -------------------------------------------------------
    def schedule(self, time: float, kind: str, fn: Callable, *args) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        heapq.heappush(self._queue, _Event(time, next(self._seq), kind, fn, args))

    def call_at(self, time: float, fn: Callable, *args, token: str | None = None) -> None:
        def fire():
            if token is not None:
                self.log.emit({"t": self.now, "kind": "TimerFire", "token": token})
            fn(*args)

        self.schedule(time, "TimerFire", fire)

    # -- packets ----------------------------------------------------------
    def new_packet(self, src: str, dst: str, octets: bytes, **tags) -> Packet:
        return Packet(next(self._packet_ids), src, dst, bytes(octets), self.now, dict(tags))

    def _record(self, kind, packet, rule_hit, disposition, where):
        self.log.emit(
            {
                "t": self.now,
                "kind": kind,
                "id": packet.id,
                "src": packet.src,
                "dst": packet.dst,
                "at": where,
                "frame_hex": packet.octets.hex(),
                "rule_hit": rule_hit,
                "disposition": disposition,
            }
        )

    def send(self, node_id: str, packet: Packet) -> None:
        """Node transmits on its access link."""
        self.counters["injected"] += 1
        self._record("Inject", packet, None, "sent", node_id)
        sw = self.topology.attachment[node_id]
        self.schedule(self.now + self.topology.access_latency, "Deliver", self._at_switch, sw, packet)

    def packet_out(self, node_id: str, packet: Packet) -> None:
        """Controller emits a packet straight out of the node's access port, bypassing flow tables."""
        self.counters["injected"] += 1
        self._record("Inject", packet, None, "packet_out", CONTROLLER)
        delay = self.topology.controller_latency + self.topology.access_latency
        self.schedule(self.now + delay, "Deliver", self._at_node, node_id, packet)

    def _at_switch(self, sw_name: str, packet: Packet) -> None:
        sw = self.topology.switches[sw_name]
        rule = sw.table.lookup(packet.src, packet.dst)
        for monitor in self.monitors:
            monitor(self, sw_name, packet)
        if rule is None:
            self.counters["dropped"] += 1
            self.counters["dropped_no_match"] += 1
            self._record("Deliver", packet, None, "drop:no_match", sw_name)
            log.debug("t=%.6f %s: no rule for %s>%s", self.now, sw_name, packet.src, packet.dst)
            return
        action = rule.action
        hit = rule.describe()
        if isinstance(action, Drop):
            self.counters["dropped"] += 1
            self._record("Deliver", packet, hit, "drop:rule", sw_name)
        elif isinstance(action, RedirectToController):
            self._record("Deliver", packet, hit, "redirect", sw_name)
            self.schedule(self.now + self.topology.controller_latency, "Deliver", self._at_controller, sw_name, packet)
        else:
            self._record("Deliver", packet, hit, "forward", sw_name)
            latency = self.topology.link_latency(sw_name, action.port)
            if action.port in self.topology.switches:
                self.schedule(self.now + latency, "Deliver", self._at_switch, action.port, packet)
            else:
                self.schedule(self.now + latency, "Deliver", self._at_node, action.port, packet)

    def _at_controller(self, sw_name: str, packet: Packet) -> None:
        self.counters["redirected"] += 1
        self._record("Deliver", packet, None, "to_controller", CONTROLLER)
        if self.controller is not None:
            self.controller.on_packet_in(self, packet, sw_name)

    def _at_node(self, node_id: str, packet: Packet) -> None:
        self.counters["delivered"] += 1
        self.delivered_to[node_id] += 1
        self._record("Deliver", packet, None, "delivered", node_id)
        node = self.nodes.get(node_id)
        if node is not None:
            node.receive(self, packet)

    # -- loop -------------------------------------------------------------
    def run_until(self, t_end: float) -> dict:
        if t_end < self.now:
            raise ValueError(f"t_end={t_end} is before now={self.now}")
        while self._queue and self._queue[0].time <= t_end:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            self.events_processed += 1
            ev.fn(*ev.args)
        self.now = t_end
        return self.snapshot()

    def snapshot(self) -> dict:
        return {
            "time": self.now,
            "events": self.events_processed,
            "injected": self.counters["injected"],
            "delivered": self.counters["delivered"],
            "dropped": self.counters["dropped"],
            "redirected": self.counters["redirected"],
            "in_flight": len([e for e in self._queue if e.kind == "Deliver"]),
        }


def install_rule(switch: Switch, rule: FlowRule) -> FlowTable:
    switch.table.install(rule)
    return switch.table


def remove_by_cookie(switch: Switch, cookie: str) -> FlowTable:
    switch.table.remove_by_cookie(cookie)
    return switch.table
