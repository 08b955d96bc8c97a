"""The in-network honeypot controller.

Quarantines suspicious nodes with flow rules, answers their redirected
DNP3 requests on behalf of the real peers using phantom plans and learned
fingerprints, profiles the commands they send on a simulation copy, and
restores them on false positives.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dnp3
from .fingerprint import NodeProfile, UnparseableFrame, sample_delay_from
from .fingerprint import observe as observe_frame
from .ids import Alert, RateDetector, TrafficEvent
from .mislead import AdversaryModel, PhantomPlan, plan_phantom
from .netsim import Drop, FlowRule, Match, Packet, RedirectToController, Simulator, Topology
from .process import Bounds, ControlCommand, ProcessLaw, ProcessState, UnknownIndex, apply_command

log = logging.getLogger(__name__)

REDIRECT_PRIORITY = 101
DROP_PRIORITY = 100
JITTER_FRAC = 0.01


class AlreadyQuarantined(ValueError):
    pass


class UnknownNode(KeyError):
    pass


class NotQuarantined(ValueError):
    pass


class Status(enum.Enum):
    ACTIVE = "active"
    RESTORED = "restored"
    CONFIRMED = "confirmed"


@dataclass
class ChangeProfile:
    node: str
    entries: list[dict] = field(default_factory=list)

    @property
    def summary(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for e in self.entries:
            for i, dx in enumerate(e["delta"]):
                if abs(dx) > out.get(i, 0.0):
                    out[i] = abs(dx)
        return out

    def to_dict(self) -> dict:
        return {"node": self.node, "entries": self.entries, "summary": {str(k): v for k, v in sorted(self.summary.items())}}


@dataclass
class SpoofSession:
    node: str
    plans: dict[str, PhantomPlan] = field(default_factory=dict)
    plan_bounds: dict[str, Bounds] = field(default_factory=dict)
    seq: dict[str, int] = field(default_factory=dict)
    interactions: list[dict] = field(default_factory=list)
    commands_received: list[tuple[str, ControlCommand]] = field(default_factory=list)
    since_refresh: dict[str, int] = field(default_factory=dict)
    requests: int = 0
    responses: int = 0

    @property
    def plan(self) -> PhantomPlan | None:
        return next(iter(self.plans.values()), None)


@dataclass
class QuarantineRecord:
    node: str
    started_at: float
    rules_installed: list[str]
    session: SpoofSession
    status: Status = Status.ACTIVE
    tables_before: dict[str, bytes] = field(default_factory=dict, repr=False)
    change_profile: ChangeProfile = None
    ended_at: float | None = None

    @property
    def quarantined(self) -> bool:
        return self.status in (Status.ACTIVE, Status.CONFIRMED)


@dataclass(frozen=True)
class SpoofSnapshot:
    """Everything the spoof path needs, frozen so workers can share it."""

    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    jitter: np.ndarray
    scaling: float
    projector: Optional[np.ndarray]
    C: np.ndarray
    d_hat: np.ndarray
    delays: dict
    service_delay: float = 0.0

    @classmethod
    def build(cls, plan: PhantomPlan, law: ProcessLaw, bounds: Bounds, scaling: float, profile: NodeProfile | None, service_delay: float = 0.0):
        projector = None
        if law.k:
            projector = law.C.T @ np.linalg.inv(law.C @ law.C.T)
        delays = {} if profile is None else {c: tuple(r.values) for c, r in profile.latency.items() if len(r)}
        return cls(
            np.array(plan.y, dtype=float),
            bounds.lower,
            bounds.upper,
            JITTER_FRAC * (bounds.upper - bounds.lower),
            scaling,
            projector,
            law.C,
            law.C @ plan.y if plan.d_hat is None else plan.d_hat,
            delays,
            service_delay,
        )

    def sample_delay(self, request_class: str, rng) -> float:
        return sample_delay_from(self.delays.get(request_class, ()), rng)


@dataclass
class SpoofResult:
    request: dnp3.AppFragment
    response: dnp3.AppFragment
    octets: bytes
    delay: float
    view: np.ndarray | None = None


def jittered_view(snap: SpoofSnapshot, rng) -> np.ndarray:
    """Plan state plus +/-1% of range uniform jitter, re-projected onto the law.

    Falls back to the unjittered plan if the projection leaves the bounds.
    """
    v = snap.y + rng.uniform(-1.0, 1.0, snap.y.size) * snap.jitter
    if snap.projector is not None:
        v = v - snap.projector @ (snap.C @ v - snap.d_hat)
    if np.any(v < snap.lower) or np.any(v > snap.upper):
        return snap.y
    return v


def spoof_response(request_octets: bytes, snap: SpoofSnapshot, rng, node_address: int | None = None, peer_address: int | None = None) -> SpoofResult:
    """Pure spoof path: decode, fill from the phantom view, encode, pick a delay.

    Raises :class:`phantomnet.dnp3.Dnp3Error` when the request does not parse.
    """
    frag, first = dnp3.decode_message(request_octets)
    dest = first.src if node_address is None else node_address
    src = first.dest if peer_address is None else peer_address
    view = None
    if frag.function is dnp3.Function.READ:
        view = jittered_view(snap, rng)
        n = view.size
        values, flags = [], []
        for i in dnp3.requested_indices(frag):
            if i < n:
                values.append(int(round(view[i] / snap.scaling)))
                flags.append(dnp3.FLAG_ONLINE)
            else:
                values.append(0)
                flags.append(0)
        response = dnp3.encode_analog_response(values, frag.app_seq, frag.transport_seq, flags)
    else:
        # acknowledge writes and operates by echoing the objects, always successful
        response = dnp3.AppFragment(dnp3.Function.RESPONSE, frag.objects, frag.app_seq, frag.transport_seq)
    octets = dnp3.encode_message(response, dest, src, dnp3.CONTROL_FROM_OUTSTATION)
    delay = snap.sample_delay(frag.function.name, rng)
    return SpoofResult(frag, response, octets, delay, view)


class Controller:
    def __init__(
        self,
        topology: Topology,
        law: ProcessLaw,
        bounds: Bounds,
        phantom_set,
        rng: np.random.Generator,
        ids: RateDetector | None = None,
        state_provider: Callable[[str], ProcessState] | None = None,
        spoof_service_delay: float = 0.0005,
        refresh_every: int = 100,
        refresh_bounds_frac: float = 0.1,
        adversary: AdversaryModel | None = None,
        event_log=None,
    ):
        self.topology = topology
        self.law = law
        self.bounds = bounds
        self.phantom_set = sorted(phantom_set)
        self.scaling = law.scaling
        self.rng = rng
        self.ids = ids
        self.state_provider = state_provider
        self.spoof_service_delay = spoof_service_delay
        self.refresh_every = refresh_every
        self.refresh_bounds_frac = refresh_bounds_frac
        self.adversary = adversary or AdversaryModel()
        self.log = event_log
        self.profiles: dict[str, NodeProfile] = {n: NodeProfile(n, seed=k) for k, n in enumerate(topology.right)}
        self.default_profile = NodeProfile("*", seed=len(topology.right))
        self.records: dict[str, QuarantineRecord] = {}
        self.peers: dict[str, set[str]] = {}
        self.confirmed: set[str] = set()
        self.plan_stats: list[dict] = []
        self.counters = {"spoofed": 0, "redirected": 0, "unparseable": 0}

    # -- logging ----------------------------------------------------------
    def _emit(self, t: float, action: str, node: str, **details) -> None:
        if self.log is not None:
            self.log.emit({"t": t, "action": action, "node": node, "details": details})

    # -- observation ------------------------------------------------------
    def monitor(self, sim: Simulator, switch: str, packet: Packet) -> None:
        """Passive tap on every switch traversal: fingerprints and IDS input."""
        topo = self.topology
        src_out = packet.src in self.profiles and topo.attachment[packet.src] == switch
        dst_out = packet.dst in self.profiles and topo.attachment.get(packet.dst) == switch
        src_master = packet.src in topo.left and topo.attachment[packet.src] == switch
        if not (src_out or dst_out or src_master):
            return
        try:
            if src_out:
                observe_frame(self.profiles[packet.src], packet.octets, "out", sim.now)
                observe_frame(self.default_profile, packet.octets, "out", sim.now)
            elif dst_out:
                observe_frame(self.profiles[packet.dst], packet.octets, "in", sim.now)
                observe_frame(self.default_profile, packet.octets, "in", sim.now)
        except UnparseableFrame as exc:
            self._emit(sim.now, "unparseable", packet.src, error=str(exc))
            return
        if src_master:
            self.peers.setdefault(packet.src, set()).add(packet.dst)
            if self.ids is not None:
                try:
                    frag, _ = dnp3.decode_message(packet.octets)
                except dnp3.Dnp3Error:
                    return
                alert = self.ids.ingest(TrafficEvent(packet.src, frag.function.name, sim.now))
                if alert is not None and packet.src not in self.records:
                    self.on_alert(alert, sim)

    # -- planning ---------------------------------------------------------
    def planning_inputs(self, peer: str) -> tuple[np.ndarray, Bounds]:
        """Latest observed state and observed bounds for a peer, configured values where unseen."""
        law, cfg = self.law, self.bounds
        profile = self.profiles.get(peer)
        x = cfg.midpoint.copy()
        lo = cfg.lower.copy()
        hi = cfg.upper.copy()
        if profile is not None:
            for i in range(law.n_real):
                vb = profile.value_bounds.get(i)
                if vb is None:
                    continue
                x[i] = vb.last * self.scaling
                lo[i] = vb.lo * self.scaling
                hi[i] = vb.hi * self.scaling
                if hi[i] <= lo[i]:
                    lo[i] -= 0.5 * self.scaling
                    hi[i] += 0.5 * self.scaling
        safety = np.maximum(cfg.safety_limit, hi)
        return x[: law.n_real], Bounds(lo, hi, safety)

    def _make_plan(self, session: SpoofSession, peer: str, now: float) -> PhantomPlan:
        x_obs, bounds = self.planning_inputs(peer)
        plan = plan_phantom(x_obs, self.law, bounds, self.phantom_set, self.adversary, now)
        session.plans[peer] = plan
        session.plan_bounds[peer] = bounds
        session.since_refresh[peer] = 0
        self.plan_stats.append({"node": session.node, "peer": peer, "t": now, "pivots": plan.pivots, "seconds": plan.solve_seconds, "feasible": plan.feasible})
        self._emit(now, "plan", session.node, peer=peer, **plan.to_dict())
        return plan

    def _needs_refresh(self, session: SpoofSession, peer: str) -> bool:
        if session.since_refresh.get(peer, 0) >= self.refresh_every:
            return True
        old = session.plan_bounds[peer]
        _, cur = self.planning_inputs(peer)
        span = np.maximum(old.upper - old.lower, 1e-12)
        drift = np.maximum(np.abs(cur.lower - old.lower), np.abs(cur.upper - old.upper)) / span
        return bool(np.any(drift > self.refresh_bounds_frac))

    def snapshot(self, session: SpoofSession, peer: str) -> SpoofSnapshot:
        profile = self.profiles.get(peer, self.default_profile)
        return SpoofSnapshot.build(session.plans[peer], self.law, session.plan_bounds[peer], self.scaling, profile, self.spoof_service_delay)

    # -- quarantine -------------------------------------------------------
    def on_alert(self, alert: Alert, sim: Simulator) -> QuarantineRecord:
        node = alert.node
        if node not in self.topology.attachment:
            raise UnknownNode(node)
        rec = self.records.get(node)
        if rec is not None and rec.quarantined:
            raise AlreadyQuarantined(node)
        cookie = f"quarantine:{node}"
        before = {name: sw.table.serialize() for name, sw in self.topology.switches.items()}
        for sw in self.topology.switches.values():
            sw.table.install(FlowRule(REDIRECT_PRIORITY, Match(src=node), RedirectToController(), cookie))
            sw.table.install(FlowRule(DROP_PRIORITY, Match(dst=node), Drop(), cookie))
        session = SpoofSession(node)
        rec = QuarantineRecord(node, sim.now, [cookie], session, Status.ACTIVE, before, ChangeProfile(node))
        self.records[node] = rec
        self._emit(sim.now, "quarantine", node, score=alert.score if np.isfinite(alert.score) else "inf", scripted=alert.scripted)
        for peer in sorted(self.peers.get(node, ())):
            self._make_plan(session, peer, sim.now)
        return rec

    def on_packet_in(self, sim: Simulator, packet: Packet, switch: str) -> None:
        self.counters["redirected"] += 1
        self.on_redirected(sim, packet)

    def on_redirected(self, sim: Simulator, packet: Packet) -> SpoofResult | None:
        rec = self.records.get(packet.src)
        if rec is None or not rec.quarantined:
            self._emit(sim.now, "ignore", packet.src, reason="not quarantined", packet=packet.id)
            return None
        session = rec.session
        peer = packet.dst
        if peer not in session.plans:
            if peer not in self.profiles:
                self._emit(sim.now, "unknown_peer", packet.src, peer=peer)
            self._make_plan(session, peer, sim.now)
        elif self._needs_refresh(session, peer):
            self._make_plan(session, peer, sim.now)
        snap = self.snapshot(session, peer)
        node_addr = self.topology.addresses[packet.src]
        peer_addr = self.topology.addresses.get(peer)
        try:
            result = spoof_response(packet.octets, snap, self.rng, node_addr, peer_addr)
        except dnp3.Dnp3Error as exc:
            self.counters["unparseable"] += 1
            self._emit(sim.now, "unparseable", packet.src, packet=packet.id, error=str(exc))
            return None

        frag = result.request
        session.requests += 1
        entry = {"t": sim.now, "packet": packet.id, "peer": peer, "function": frag.function.name, "tseq": frag.transport_seq}
        if frag.function is dnp3.Function.READ:
            entry["indices"] = dnp3.requested_indices(frag)
        else:
            entry["commands"] = self._handle_commands(rec, peer, frag, sim.now)
        session.interactions.append(entry)

        session.seq[peer] = (session.seq.get(peer, 0) + 1) % 64
        session.since_refresh[peer] = session.since_refresh.get(peer, 0) + 1
        session.responses += 1
        self.counters["spoofed"] += 1
        send_at = sim.now + self.spoof_service_delay + result.delay
        reply = sim.new_packet(peer, packet.src, result.octets, provenance="plan", request=packet.id, service=self.spoof_service_delay, sampled_delay=result.delay)
        session.interactions.append({"t": send_at, "response_to": packet.id, "peer": peer})
        self._emit(sim.now, "spoof", packet.src, peer=peer, request=packet.id, function=frag.function.name, delay=result.delay)
        sim.call_at(send_at, sim.packet_out, packet.src, reply)
        if frag.function is not dnp3.Function.READ:
            self.record_interaction(packet.src, sim.now)
        return result

    def _handle_commands(self, rec: QuarantineRecord, peer: str, frag: dnp3.AppFragment, now: float) -> list[dict]:
        out = []
        for p in dnp3.operate_points(frag):
            cmd = ControlCommand(p.index, p.setpoint * self.scaling, rec.node)
            rec.session.commands_received.append((peer, cmd))
            entry = {"t": now, "peer": peer, "index": p.index, "setpoint": cmd.setpoint, "phantom": p.index in self.phantom_set}
            entry.update(self._simulate_command(peer, cmd))
            rec.change_profile.entries.append(entry)
            out.append({"index": p.index, "setpoint": cmd.setpoint})
        return out

    def _simulate_command(self, peer: str, cmd: ControlCommand) -> dict:
        """Predict the command's effect on a copy of the peer's process; the live state is never touched."""
        if self.state_provider is not None and peer in self.profiles:
            base = self.state_provider(peer).copy()
        else:
            x_obs, _ = self.planning_inputs(peer)
            base = ProcessState(np.concatenate([x_obs, self.bounds.midpoint[self.law.n_real :]]))
        try:
            after, applied = apply_command(base, cmd, self.law, self.bounds)
        except UnknownIndex:
            return {"applied": False, "delta": [0.0] * self.law.n}
        return {"applied": applied, "delta": [float(v) for v in after.x - base.x]}

    def record_interaction(self, node: str, now: float) -> dict:
        """Summarize a session for the IDS and confirm the node if it targeted a phantom."""
        rec = self.records[node]
        s = rec.session
        reads = [e for e in s.interactions if e.get("function") == "READ"]
        times = [e["t"] for e in s.interactions if "function" in e]
        span = (times[-1] - times[0]) if len(times) > 1 else 0.0
        targets = sorted({c.target_index for _, c in s.commands_received})
        summary = {
            "requests": s.requests,
            "reads": len(reads),
            "commands": len(s.commands_received),
            "command_targets": targets,
            "request_rate": (len(times) - 1) / span if span > 0 else 0.0,
            "phantom_targets": [t for t in targets if t in self.phantom_set],
        }
        self._emit(now, "interaction", node, **summary)
        if rec.status is Status.ACTIVE and summary["phantom_targets"]:
            rec.status = Status.CONFIRMED
            self.confirmed.add(node)
            self._emit(now, "confirm", node, targets=summary["phantom_targets"])
        summary["status"] = rec.status.value
        return summary

    def restore(self, node: str, sim: Simulator) -> ChangeProfile:
        rec = self.records.get(node)
        if rec is None or not rec.quarantined:
            raise NotQuarantined(node)
        for cookie in rec.rules_installed:
            for sw in self.topology.switches.values():
                sw.table.remove_by_cookie(cookie)
        rec.status = Status.RESTORED
        rec.ended_at = sim.now
        self._emit(sim.now, "restore", node, profile=rec.change_profile.to_dict())
        return rec.change_profile

    def quarantined_nodes(self) -> set[str]:
        return {n for n, r in self.records.items() if r.quarantined}
