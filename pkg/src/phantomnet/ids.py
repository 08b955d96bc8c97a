"""Rate-anomaly IDS driving the honeypot, plus scripted alert injection."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable


@dataclass(frozen=True)
class TrafficEvent:
    node: str
    cls: str
    t: float


@dataclass(frozen=True)
class Alert:
    node: str
    score: float
    t: float
    scripted: bool = False


@dataclass
class ClassStats:
    mean: float
    std: float
    samples: int


def _stats(rates: list[float]) -> ClassStats:
    n = len(rates)
    mu = sum(rates) / n
    var = sum((r - mu) ** 2 for r in rates) / n
    return ClassStats(mu, math.sqrt(var), n)


def _rates(events: Iterable[TrafficEvent]) -> dict[tuple[str, str], list[float]]:
    last: dict[tuple[str, str], float] = {}
    out: dict[tuple[str, str], list[float]] = defaultdict(list)
    for ev in events:
        key = (ev.node, ev.cls)
        prev = last.get(key)
        if prev is not None and ev.t > prev:
            out[key].append(1.0 / (ev.t - prev))
        last[key] = ev.t
    return out


@dataclass
class NormalModel:
    per_node: dict[tuple[str, str], ClassStats] = field(default_factory=dict)
    per_class: dict[str, ClassStats] = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return sum(s.samples for s in self.per_node.values())

    def to_dict(self) -> dict:
        return {
            "per_node": {f"{n}/{c}": [s.mean, s.std, s.samples] for (n, c), s in sorted(self.per_node.items())},
            "per_class": {c: [s.mean, s.std, s.samples] for c, s in sorted(self.per_class.items())},
        }


def train_normal(events: Iterable[TrafficEvent], exclusions: Iterable[str] = ()) -> NormalModel:
    """Per-node, per-class mean and deviation of instantaneous request rates.

    Events from excluded nodes (e.g. confirmed attackers) are left out of
    both the per-node and the pooled per-class statistics.
    """
    excluded = set(exclusions)
    rates = _rates(ev for ev in events if ev.node not in excluded)
    model = NormalModel()
    pooled: dict[str, list[float]] = defaultdict(list)
    for key in sorted(rates):
        model.per_node[key] = _stats(rates[key])
        pooled[key[1]].extend(rates[key])
    for cls in sorted(pooled):
        model.per_class[cls] = _stats(pooled[cls])
    return model


class RateDetector:
    """EWMA of per-node request rate compared against ``mean + k * std``.

    ``half_life`` is measured in events. ``min_sigma_frac`` puts a floor
    under the deviation so perfectly periodic training traffic does not
    produce a zero-width band.
    """

    def __init__(self, model: NormalModel | None = None, k: float = 4.0, half_life: float = 8.0, min_sigma_frac: float = 0.05):
        self.model = model or NormalModel()
        self.k = k
        self.half_life = half_life
        self.min_sigma_frac = min_sigma_frac
        self.alpha = 1.0 - 2.0 ** (-1.0 / half_life)
        self._last: dict[tuple[str, str], float] = {}
        self._ewma: dict[tuple[str, str], float] = {}
        self.alerted: set[str] = set()
        self.history: list[TrafficEvent] = []

    def threshold(self, node: str, cls: str) -> float | None:
        stats = self.model.per_node.get((node, cls))
        if stats is None:
            return None
        sigma = max(stats.std, self.min_sigma_frac * stats.mean)
        return stats.mean + self.k * sigma

    def ingest(self, event: TrafficEvent) -> Alert | None:
        self.history.append(event)
        key = (event.node, event.cls)
        prev = self._last.get(key)
        self._last[key] = event.t
        if prev is None or event.t <= prev:
            return None
        rate = 1.0 / (event.t - prev)
        stats = self.model.per_node.get(key)
        ewma = self._ewma.get(key, stats.mean if stats else rate)
        ewma += self.alpha * (rate - ewma)
        self._ewma[key] = ewma
        limit = self.threshold(*key)
        if limit is None or ewma <= limit or event.node in self.alerted:
            return None
        self.alerted.add(event.node)
        sigma = max(stats.std, self.min_sigma_frac * stats.mean)
        return Alert(event.node, (ewma - stats.mean) / sigma, event.t)

    def inject(self, node: str, t: float) -> Alert:
        """Scripted alert, bypassing the detector."""
        self.alerted.add(node)
        return Alert(node, math.inf, t, scripted=True)

    def retrain(self, exclusions: Iterable[str] = ()) -> NormalModel:
        self.model = train_normal(self.history, exclusions)
        return self.model
