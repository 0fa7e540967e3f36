"""Pairwise social-distancing alerts and zone-driven sanitize planning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from . import kernels

DEFAULT_DISTANCE_FT = 6.0
DEFAULT_PAIR_COOLDOWN_MS = 60_000
DEFAULT_MAX_THRESHOLD_1 = 1
DEFAULT_MAX_THRESHOLD_2 = 3


class SpatialError(ValueError):
    pass


@dataclass(frozen=True)
class EntityPosition:
    entity_id: str
    x: float
    y: float
    ts: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SpatialError(f"{self.entity_id}: non-finite coordinates")


@dataclass(frozen=True)
class DistancePolicy:
    threshold_ft: float = DEFAULT_DISTANCE_FT
    cooldown_ms: int = DEFAULT_PAIR_COOLDOWN_MS

    def __post_init__(self) -> None:
        if not self.threshold_ft > 0:
            raise SpatialError("threshold_ft must be positive")
        if self.cooldown_ms < 0:
            raise SpatialError("cooldown_ms must be >= 0")


@dataclass(frozen=True)
class PairAlert:
    a: str
    b: str
    distance_ft: float
    ts: int

    @property
    def pair(self) -> tuple[str, str]:
        return (self.a, self.b)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "distance_ft": self.distance_ft, "ts": self.ts}


def distancing_alerts(positions: Iterable[EntityPosition], policy: DistancePolicy = DistancePolicy(),
                      last_alerts: Mapping[tuple[str, str], int] | None = None) -> list[PairAlert]:
    """One alert per unordered pair closer than the threshold whose cooldown has elapsed.

    Pairs are reported with ids in sorted order and the result is sorted by
    pair, so it does not depend on the input order. ``last_alerts`` maps a
    sorted pair to the ts of its previous alert.
    """
    pos = list(positions)
    if not pos:
        return []
    ids = [p.entity_id for p in pos]
    if len(set(ids)) != len(ids):
        raise SpatialError("duplicate entity_id in snapshot")
    ts_set = {p.ts for p in pos}
    if len(ts_set) != 1:
        raise SpatialError("positions must share one snapshot ts")
    ts = ts_set.pop()
    xs = np.fromiter((p.x for p in pos), dtype=np.float64, count=len(pos))
    ys = np.fromiter((p.y for p in pos), dtype=np.float64, count=len(pos))
    last_alerts = last_alerts or {}
    out = []
    for i, j, d in kernels.close_pairs(xs, ys, policy.threshold_ft):
        a, b = sorted((ids[i], ids[j]))
        prev = last_alerts.get((a, b))
        if prev is not None and ts - prev < policy.cooldown_ms:
            continue
        out.append(PairAlert(a, b, d, ts))
    out.sort(key=lambda al: al.pair)
    return out


class DistancingMonitor:
    """Stateful wrapper that remembers per-pair alert times for the cooldown."""

    def __init__(self, policy: DistancePolicy = DistancePolicy()):
        self.policy = policy
        self.last_alerts: dict[tuple[str, str], int] = {}

    def observe(self, positions: Iterable[EntityPosition]) -> list[PairAlert]:
        alerts = distancing_alerts(positions, self.policy, self.last_alerts)
        for al in alerts:
            self.last_alerts[al.pair] = al.ts
        return alerts


class Zone(str, Enum):
    IZ = "IZ"
    LZ = "LZ"
    SZ = "SZ"


@dataclass(frozen=True)
class PresenceEvent:
    entity_id: str
    zone: Zone
    enter: bool
    ts: int = 0


@dataclass(frozen=True)
class ZoneOccupancy:
    number_IZ: int = 0
    number_LZ: int = 0
    number_SZ: int = 0
    max_threshold_1: int = DEFAULT_MAX_THRESHOLD_1
    max_threshold_2: int = DEFAULT_MAX_THRESHOLD_2
    sensor_faults: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if min(self.number_IZ, self.number_LZ, self.number_SZ) < 0:
            raise SpatialError("zone counts must be >= 0")
        if min(self.max_threshold_1, self.max_threshold_2) < 1:
            raise SpatialError("zone thresholds must be >= 1")

    def count(self, zone: Zone) -> int:
        return getattr(self, f"number_{zone.value}")

    def to_dict(self) -> dict:
        return {"number_IZ": self.number_IZ, "number_LZ": self.number_LZ, "number_SZ": self.number_SZ,
                "max_threshold_1": self.max_threshold_1, "max_threshold_2": self.max_threshold_2,
                "sensor_faults": self.sensor_faults}


class OccupancyTracker:
    """Per-facility presence state; one logical updater."""

    def __init__(self) -> None:
        self.present: dict[Zone, set[str]] = {z: set() for z in Zone}
        self.faults = 0

    def apply(self, ev: PresenceEvent) -> None:
        here = self.present[Zone(ev.zone)]
        if ev.enter:
            here.add(ev.entity_id)
        elif ev.entity_id in here:
            here.remove(ev.entity_id)
        else:
            # exit without a matching enter: counted, occupancy left unchanged
            self.faults += 1

    def occupancy(self, max_threshold_1: int = DEFAULT_MAX_THRESHOLD_1,
                  max_threshold_2: int = DEFAULT_MAX_THRESHOLD_2) -> ZoneOccupancy:
        return ZoneOccupancy(len(self.present[Zone.IZ]), len(self.present[Zone.LZ]),
                             len(self.present[Zone.SZ]), max_threshold_1, max_threshold_2, self.faults)


def count_person(sensor_events: Iterable[PresenceEvent], max_threshold_1: int = DEFAULT_MAX_THRESHOLD_1,
                 max_threshold_2: int = DEFAULT_MAX_THRESHOLD_2) -> ZoneOccupancy:
    """Distinct entities currently present per zone, starting from all zeros."""
    tracker = OccupancyTracker()
    for ev in sensor_events:
        tracker.apply(ev)
    return tracker.occupancy(max_threshold_1, max_threshold_2)


def plan_sanitize(occ: ZoneOccupancy) -> list[Zone]:
    """Zones for one sanitizing pass, IZ first.

    IZ qualifies at ``max_threshold_1``. LZ and SZ share ``max_threshold_2``
    and each qualifying one is included, so a tie or both-over case sanitizes
    both rather than an arbitrary argmax.
    """
    plan = []
    if occ.number_IZ >= occ.max_threshold_1:
        plan.append(Zone.IZ)
    for zone in (Zone.LZ, Zone.SZ):
        if occ.count(zone) >= occ.max_threshold_2:
            plan.append(zone)
    return plan
