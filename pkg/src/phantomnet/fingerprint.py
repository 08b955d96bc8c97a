"""Per-node traffic fingerprints learned from frames seen at the controller."""

from __future__ import annotations

import bisect
import logging
import random
import zlib
from collections import Counter
from dataclasses import dataclass, field

from . import dnp3

log = logging.getLogger(__name__)

RESERVOIR_CAPACITY = 4096
DEFAULT_DELAY = 0.010
JITTER = 0.05


class UnparseableFrame(ValueError):
    pass


class EmptySample(ValueError):
    pass


class Reservoir:
    """Uniform sample of a stream with bounded memory (Vitter's algorithm R)."""

    def __init__(self, capacity: int = RESERVOIR_CAPACITY, seed: int = 0):
        self.capacity = capacity
        self.values: list[float] = []
        self.seen = 0
        self._rng = random.Random(seed)

    def add(self, value: float) -> None:
        self.seen += 1
        if len(self.values) < self.capacity:
            self.values.append(value)
            return
        j = self._rng.randrange(self.seen)
        if j < self.capacity:
            self.values[j] = value

    def __len__(self):
        return len(self.values)


@dataclass
class ValueBounds:
    lo: int
    hi: int
    count: int = 1
    last: int = 0

    def update(self, v: int) -> None:
        if v < self.lo:
            self.lo = v
        if v > self.hi:
            self.hi = v
        self.count += 1
        self.last = v


@dataclass
class NodeProfile:
    node_id: str
    length_hist: dict[str, Counter] = field(default_factory=dict)
    latency: dict[str, Reservoir] = field(default_factory=dict)
    class_mix: Counter = field(default_factory=Counter)
    value_bounds: dict[int, ValueBounds] = field(default_factory=dict)
    last_seen: float | None = None
    observations: int = 0
    seed: int = 0
    pending: dict[tuple, tuple] = field(default_factory=dict, repr=False)

    def reservoir(self, request_class: str) -> Reservoir:
        res = self.latency.get(request_class)
        if res is None:
            res = self.latency[request_class] = Reservoir(seed=zlib.crc32(f"{self.seed}:{request_class}".encode()))
        return res

    def fold_values(self, indices, values) -> None:
        for i, v in zip(indices, values):
            vb = self.value_bounds.get(i)
            if vb is None:
                self.value_bounds[i] = ValueBounds(v, v, 1, v)
            else:
                vb.update(v)

    def to_dict(self) -> dict:
        return {
            "node": self.node_id,
            "observations": self.observations,
            "last_seen": self.last_seen,
            "class_mix": dict(sorted(self.class_mix.items())),
            "length_hist": {c: {str(k): v for k, v in sorted(h.items())} for c, h in sorted(self.length_hist.items())},
            "latency": {c: {"size": len(r), "seen": r.seen, "mean": (sum(r.values) / len(r)) if len(r) else None} for c, r in sorted(self.latency.items())},
            "value_bounds": {str(i): [vb.lo, vb.hi, vb.count] for i, vb in sorted(self.value_bounds.items())},
        }


def observe(profile: NodeProfile, octets: bytes, direction: str, timestamp: float) -> NodeProfile:
    """Fold one packet into ``profile``.

    ``direction`` is ``"in"`` for a request addressed to the profiled node
    and ``"out"`` for a frame it sent. Responses are paired with the
    request that shares (requester, responder, transport sequence); the
    pairing gives the response delay and the indices its values belong to.
    """
    if direction not in ("in", "out"):
        raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
    try:
        frag, first = dnp3.decode_message(octets)
    except dnp3.Dnp3Error as exc:
        log.warning("profile %s: unparseable frame at t=%.6f: %s", profile.node_id, timestamp, exc)
        raise UnparseableFrame(str(exc)) from exc

    cls = frag.function.name
    profile.observations += 1
    profile.last_seen = timestamp
    profile.class_mix[cls] += 1
    profile.length_hist.setdefault(cls, Counter())[len(octets)] += 1

    if frag.function is dnp3.Function.RESPONSE:
        key = (first.dest, first.src, frag.transport_seq)
        req = profile.pending.pop(key, None)
        values = dnp3.analog_values(frag)
        if req is not None:
            req_cls, t_req, indices = req
            profile.reservoir(req_cls).add(timestamp - t_req)
        else:
            indices = list(range(len(values)))
        if values:
            profile.fold_values(indices, values)
    else:
        key = (first.src, first.dest, frag.transport_seq)
        profile.pending[key] = (cls, timestamp, dnp3.requested_indices(frag))
    return profile


def sample_response_delay(profile: NodeProfile | None, request_class: str, rng) -> float:
    """Draw a delay from the learned reservoir with +/-5% uniform jitter.

    Falls back to 10 ms when nothing has been learned for the class.
    """
    res = None if profile is None else profile.latency.get(request_class)
    return sample_delay_from(() if res is None else res.values, rng)


def sample_delay_from(values, rng) -> float:
    """Resample one learned delay with jitter, or the default when ``values`` is empty."""
    base = values[int(rng.integers(len(values)))] if len(values) else DEFAULT_DELAY
    return base * (1.0 + rng.uniform(-JITTER, JITTER))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = sorted(a)
    b = sorted(b)
    if not a or not b:
        raise EmptySample("both samples must be nonempty")
    na, nb = len(a), len(b)
    d = 0.0
    for x in set(a) | set(b):
        fa = bisect.bisect_right(a, x) / na
        fb = bisect.bisect_right(b, x) / nb
        d = max(d, abs(fa - fb))
    return d
