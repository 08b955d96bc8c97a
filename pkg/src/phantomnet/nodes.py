"""Traffic generators for the simulator: polling masters and process outstations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dnp3
from .mislead import AdversaryModel, decide
from .netsim import Packet, Simulator
from .process import Bounds, ControlCommand, ProcessLaw, ProcessState, UnknownIndex, apply_command, initial_state, step
from .process import observe as read_counts

log = logging.getLogger(__name__)


@dataclass
class Request:
    id: int
    t: float
    tseq: int
    cls: str
    answers: int = 0


@dataclass
class RttSample:
    t: float
    cls: str
    rtt: float
    provenance: str
    tags: dict = field(default_factory=dict)


class Master:
    """Polls one outstation every ``poll_period`` and records round-trip times.

    An adversarial master keeps a view of every value it has read and,
    after ``attack_after`` responses, sends one OPERATE chosen by the
    adversary decision function.
    """

    def __init__(
        self,
        node_id: str,
        peer: str,
        addresses: dict[str, int],
        indices,
        poll_period: float,
        start: float = 0.0,
        adversary: AdversaryModel | None = None,
        adversary_bounds: Bounds | None = None,
        scaling: float = 1.0,
        attack_after: int = 20,
    ):
        self.id = node_id
        self.peer = peer
        self.address = addresses[node_id]
        self.peer_address = addresses[peer]
        self.indices = list(indices)
        self.poll_period = poll_period
        self.start = start
        self.adversary = adversary
        self.adversary_bounds = adversary_bounds
        self.scaling = scaling
        self.attack_after = attack_after
        self.counter = 0
        self.stopped = False
        self.requests: list[Request] = []
        self._pending: dict[int, Request] = {}
        self.samples: list[RttSample] = []
        self.unmatched = 0
        self.view: np.ndarray | None = None
        self.responses = 0
        self.commands_sent: list[ControlCommand] = []

    def begin(self, sim: Simulator) -> None:
        sim.call_at(self.start, self._poll, sim)

    def _send(self, sim: Simulator, frag: dnp3.AppFragment) -> None:
        octets = dnp3.encode_message(frag, self.peer_address, self.address, dnp3.CONTROL_FROM_MASTER)
        pkt = sim.new_packet(self.id, self.peer, octets)
        req = Request(pkt.id, sim.now, frag.transport_seq, frag.function.name)
        self.requests.append(req)
        self._pending[frag.transport_seq] = req
        sim.send(self.id, pkt)

    def _next_seq(self) -> tuple[int, int]:
        seq = self.counter
        self.counter += 1
        return seq % 16, seq % 64

    def _poll(self, sim: Simulator) -> None:
        if self.stopped:
            return
        app_seq, tseq = self._next_seq()
        self._send(sim, dnp3.read_request(self.indices, app_seq, tseq))
        sim.call_at(sim.now + self.poll_period, self._poll, sim)

    def receive(self, sim: Simulator, packet: Packet) -> None:
        try:
            frag, _ = dnp3.decode_message(packet.octets)
        except dnp3.Dnp3Error as exc:
            log.warning("%s: dropped unparseable reply: %s", self.id, exc)
            return
        req = self._pending.pop(frag.transport_seq, None)
        if req is None:
            self.unmatched += 1
            return
        req.answers += 1
        self.samples.append(RttSample(sim.now, req.cls, sim.now - req.t, packet.tags.get("provenance", "live"), dict(packet.tags)))
        if req.cls == "READ":
            self.responses += 1
            self._update_view(frag)
            if self.adversary is not None and self.responses == self.attack_after and not self.stopped:
                self._attack(sim)

    def _update_view(self, frag: dnp3.AppFragment) -> None:
        if self.adversary is None:
            return
        n = len(self.adversary_bounds)
        if self.view is None:
            self.view = np.full(n, -np.inf)
        points = [p for b in frag.objects for p in b.points if isinstance(p, dnp3.AnalogPoint)]
        for i, p in zip(self.indices, points):
            if i < n and p.flag & dnp3.FLAG_ONLINE:
                self.view[i] = p.value * self.scaling

    def _attack(self, sim: Simulator) -> None:
        cmd = decide(self.adversary, self.view, self.adversary_bounds, self.id)
        self.commands_sent.append(cmd)
        app_seq, tseq = self._next_seq()
        counts = int(round(cmd.setpoint / self.scaling))
        self._send(sim, dnp3.operate_request([(cmd.target_index, counts)], app_seq, tseq))


class Outstation:
    """Owns a live process and answers READ and OPERATE requests after a uniform service delay."""

    def __init__(
        self,
        node_id: str,
        addresses: dict[str, int],
        law: ProcessLaw,
        bounds: Bounds,
        rng: np.random.Generator,
        sigma: float = 0.0,
        service_delay: tuple[float, float] = (0.002, 0.004),
        step_period: float = 1.0,
    ):
        self.id = node_id
        self.addresses = addresses
        self.law = law
        self.bounds = bounds
        self.rng = rng
        self.sigma = sigma
        self.service_delay = service_delay
        self.step_period = step_period
        self.state: ProcessState = initial_state(law, bounds)
        self.commands: list[tuple[float, ControlCommand, bool]] = []
        self.served = 0

    def begin(self, sim: Simulator) -> None:
        if self.sigma > 0 and self.step_period > 0:
            sim.call_at(self.step_period, self._step, sim)

    def _step(self, sim: Simulator) -> None:
        self.state = step(self.state, self.law, self.bounds, self.rng, self.sigma, self.step_period)
        sim.call_at(sim.now + self.step_period, self._step, sim)

    def receive(self, sim: Simulator, packet: Packet) -> None:
        try:
            frag, first = dnp3.decode_message(packet.octets)
        except dnp3.Dnp3Error as exc:
            log.warning("%s: dropped unparseable request: %s", self.id, exc)
            return
        if frag.function is dnp3.Function.READ:
            values, flags = [], []
            for i in dnp3.requested_indices(frag):
                try:
                    # phantom variables have no physical counterpart on the real device
                    values.append(read_counts(self.state, [i], self.law.scaling, self.law.n_real)[0])
                    flags.append(dnp3.FLAG_ONLINE)
                except UnknownIndex:
                    values.append(0)
                    flags.append(0)
            reply = dnp3.encode_analog_response(values, frag.app_seq, frag.transport_seq, flags)
        elif frag.function in (dnp3.Function.OPERATE, dnp3.Function.WRITE):
            for p in dnp3.operate_points(frag):
                cmd = ControlCommand(p.index, p.setpoint * self.law.scaling, packet.src)
                try:
                    self.state, ok = apply_command(self.state, cmd, self.law, self.bounds)
                except UnknownIndex:
                    ok = False
                self.commands.append((sim.now, cmd, ok))
            reply = dnp3.AppFragment(dnp3.Function.RESPONSE, frag.objects, frag.app_seq, frag.transport_seq)
        else:
            return
        octets = dnp3.encode_message(reply, first.src, first.dest, dnp3.CONTROL_FROM_OUTSTATION)
        out = sim.new_packet(self.id, packet.src, octets, provenance="live")
        self.served += 1
        lo, hi = self.service_delay
        sim.call_at(sim.now + self.rng.uniform(lo, hi), sim.send, self.id, out)

