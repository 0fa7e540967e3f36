"""Edge gateway: device admission, threshold rules, read policy, store-and-forward."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Protocol, Union

from .core import (
    METRIC_CLASS,
    DeviceDescriptor,
    DeviceKind,
    Metric,
    MetricClass,
    Principal,
    ReadingValidator,
    Role,
    TelemetryReading,
)

log = logging.getLogger(__name__)

DEFAULT_VITALS_DEBOUNCE_MS = 300_000
DEFAULT_QUEUE_CAPACITY = 100_000


class GatewayError(Exception):
    pass


class InvalidReadingError(GatewayError, ValueError):
    pass


class UnknownDeviceError(GatewayError, KeyError):
    pass


class MetricMismatchError(GatewayError, ValueError):
    pass


class LinkError(GatewayError):
    """Raised by an uplink when an entry could not be confirmed as delivered."""


class Comparator(str, Enum):
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"
    OUTSIDE_RANGE = "outside_range"


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


@dataclass(frozen=True)
class Rule:
    rule_id: str
    metric: Metric
    comparator: Comparator
    threshold: Union[float, tuple[float, float]]
    severity: Severity = Severity.WARNING
    debounce_ms: int = DEFAULT_VITALS_DEBOUNCE_MS
    recipients: frozenset[Role] = frozenset()
    message: str = ""

    def __post_init__(self) -> None:
        if self.metric is Metric.POSITION_FT:
            raise ValueError("threshold rules need a scalar metric")
        if self.debounce_ms < 0:
            raise ValueError(f"{self.rule_id}: debounce_ms must be >= 0")
        if self.comparator is Comparator.OUTSIDE_RANGE:
            lo, hi = self.threshold
            if not lo < hi:
                raise ValueError(f"{self.rule_id}: outside_range needs lo < hi")
        elif isinstance(self.threshold, tuple):
            raise ValueError(f"{self.rule_id}: {self.comparator.value} takes a single threshold")

    def holds(self, value: float) -> bool:
        c = self.comparator
        t = self.threshold
        if c is Comparator.LT:
            return value < t
        if c is Comparator.LE:
            return value <= t
        if c is Comparator.GT:
            return value > t
        if c is Comparator.GE:
            return value >= t
        lo, hi = t
        return value < lo or value > hi

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Rule":
        comparator = Comparator(d["comparator"])
        if comparator is Comparator.OUTSIDE_RANGE:
            threshold = (float(d["lo"]), float(d["hi"])) if "lo" in d else tuple(map(float, d["threshold"]))
        else:
            threshold = float(d["threshold"])
        return cls(
            rule_id=d["rule_id"],
            metric=Metric(d["metric"]),
            comparator=comparator,
            threshold=threshold,
            severity=Severity(d.get("severity", "warning")),
            debounce_ms=int(d.get("debounce_ms", DEFAULT_VITALS_DEBOUNCE_MS)),
            recipients=frozenset(Role(r) for r in d.get("recipients", ())),
            message=d.get("message", ""),
        )

    def to_dict(self) -> dict:
        d = {
            "rule_id": self.rule_id,
            "metric": self.metric.value,
            "comparator": self.comparator.value,
            "severity": self.severity.value,
            "debounce_ms": self.debounce_ms,
            "recipients": sorted(r.value for r in self.recipients),
            "message": self.message,
        }
        if isinstance(self.threshold, tuple):
            d["lo"], d["hi"] = self.threshold
        else:
            d["threshold"] = self.threshold
        return d


@dataclass(frozen=True)
class AlertEvent:
    alert_id: str
    rule_id: str
    device_id: str
    observed_value: Any
    ts: int
    severity: Severity
    recipients: frozenset[Role]
    message: str = ""
    delivered_late: bool = False

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "rule_id": self.rule_id,
            "device_id": self.device_id,
            "observed_value": self.observed_value,
            "ts": self.ts,
            "severity": self.severity.value,
            "recipients": sorted(r.value for r in self.recipients),
            "message": self.message,
            "delivered_late": self.delivered_late,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AlertEvent":
        return cls(d["alert_id"], d["rule_id"], d["device_id"], d["observed_value"], int(d["ts"]),
                   Severity(d["severity"]), frozenset(Role(r) for r in d["recipients"]),
                   d.get("message", ""), bool(d.get("delivered_late", False)))


def evaluate_rule(rule: Rule, r: TelemetryReading, last_fire_ts: int | None,
                  alert_id: str | None = None) -> AlertEvent | None:
    """Fire iff the comparator holds and the debounce window since ``last_fire_ts`` has elapsed."""
    if rule.metric is not r.metric:
        raise MetricMismatchError(f"rule {rule.rule_id} is on {rule.metric.value}, reading is {r.metric.value}")
    if not rule.holds(r.value):
        return None
    if last_fire_ts is not None and r.ts - last_fire_ts < rule.debounce_ms:
        return None
    return AlertEvent(
        alert_id=alert_id or f"{rule.rule_id}:{r.device_id}:{r.seq}",
        rule_id=rule.rule_id,
        device_id=r.device_id,
        observed_value=r.value,
        ts=r.ts,
        severity=rule.severity,
        recipients=rule.recipients,
        message=rule.message,
    )


Entry = Union[TelemetryReading, AlertEvent]


class ForwardQueue:
    """Bounded FIFO; pushing past capacity evicts and returns the oldest entry."""

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._q: deque[Entry] = deque()
        self.high_water = 0
        self.dropped = 0

    def push(self, entry: Entry) -> Entry | None:
        evicted = None
        if len(self._q) >= self.capacity:
            evicted = self._q.popleft()
            self.dropped += 1
        self._q.append(entry)
        self.high_water = max(self.high_water, len(self._q))
        return evicted

    def peek(self) -> Entry:
        return self._q[0]

    def pop(self) -> Entry:
        return self._q.popleft()

    def __len__(self) -> int:
        return len(self._q)

    def __iter__(self):
        return iter(self._q)


class Access(str, Enum):
    FULL = "full"
    VIEW = "view"
    NONE = "none"


class Decision(str, Enum):
    ALLOW_FULL = "allow_full"
    ALLOW_VIEW = "allow_view"
    DENY = "deny"


_ACCESS_TO_DECISION = {Access.FULL: Decision.ALLOW_FULL, Access.VIEW: Decision.ALLOW_VIEW,
                       Access.NONE: Decision.DENY}


@dataclass(frozen=True)
class AccessPolicy:
    """role -> metric class -> access level. Unlisted roles and classes get ``none``."""

    permissions: Mapping[Role, Mapping[MetricClass, Access]] = field(default_factory=dict)

    def level(self, role: Role, cls: MetricClass) -> Access:
        return self.permissions.get(role, {}).get(cls, Access.NONE)

    def decide(self, principal: Principal, owner: str | None, metric: Metric) -> Decision:
        cls = METRIC_CLASS[metric]
        if principal.role is Role.PATIENT and cls is MetricClass.VITALS and owner == principal.principal_id:
            return Decision.ALLOW_FULL
        return _ACCESS_TO_DECISION[self.level(principal.role, cls)]

    def without(self, role: Role, cls: MetricClass | None = None) -> "AccessPolicy":
        perms = {r: dict(m) for r, m in self.permissions.items()}
        if cls is None:
            perms.pop(role, None)
        else:
            perms.get(role, {}).pop(cls, None)
        return AccessPolicy(perms)

    @classmethod
    def from_dict(cls, d: Mapping[str, Mapping[str, str]]) -> "AccessPolicy":
        return cls({Role(r): {MetricClass(k): Access(v) for k, v in m.items()} for r, m in d.items()})

    def to_dict(self) -> dict:
        return {r.value: {k.value: v.value for k, v in m.items()} for r, m in self.permissions.items()}


RPM_POLICY = AccessPolicy({
    Role.PRACTITIONER: {MetricClass.VITALS: Access.FULL, MetricClass.ENVIRONMENT: Access.FULL,
                        MetricClass.LOCATION: Access.FULL},
    Role.FAMILY: {MetricClass.VITALS: Access.VIEW, MetricClass.ENVIRONMENT: Access.FULL,
                  MetricClass.LOCATION: Access.VIEW},
    Role.PATIENT: {MetricClass.ENVIRONMENT: Access.FULL, MetricClass.LOCATION: Access.FULL},
    Role.OPERATOR: {MetricClass.ENVIRONMENT: Access.FULL},
})


def redact(value: Any, metric: Metric, decision: Decision,
           zone_of: Callable[[float, float], str] | None = None) -> Any:
    """Apply a read decision to a value: raw for full, coarsened for view."""
    if decision is Decision.DENY:
        raise PermissionError(f"read of {metric.value} denied")
    if decision is Decision.ALLOW_FULL:
        return value
    cls = METRIC_CLASS[metric]
    if cls is MetricClass.VITALS:
        return int(round(value))
    if cls is MetricClass.LOCATION:
        return zone_of(*value) if zone_of else "unknown"
    return value


class Uplink(Protocol):
    def send(self, gateway_id: str, entry: Entry) -> None: ...

    def reconcile(self, device_id: str) -> None: ...


@dataclass(frozen=True)
class LinkState:
    up: bool
    queue_depth: int


class EdgeGateway:
    """One logical event loop per gateway; calls are expected from a single owner.

    ``observer(kind, payload)`` receives ``alert``, ``link``, ``drain`` and
    ``queue_overflow`` events for logging.
    """

    def __init__(
        self,
        gateway_id: str,
        devices: Iterable[DeviceDescriptor] = (),
        rules: Iterable[Rule] = (),
        policy: AccessPolicy = AccessPolicy(),
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        uplink: Uplink | None = None,
        clock: Callable[[], int] = lambda: 0,
        observer: Callable[[str, dict], object] | None = None,
        link_up: bool = True,
    ):
        self.gateway_id = gateway_id
        self.devices: dict[str, DeviceDescriptor] = {}
        for d in devices:
            self.add_device(d)
        self.rules: list[Rule] = list(rules)
        self.policy = policy
        self.queue = ForwardQueue(queue_capacity)
        self.uplink = uplink
        self.clock = clock
        self.observer = observer
        self.link_up = link_up
        self.validator = ReadingValidator()
        self._last_fire: dict[tuple[str, str], int] = {}
        self._listeners: list[Callable[[AlertEvent], object]] = []
        self.audit: list[AlertEvent] = []
        self.alerts: list[AlertEvent] = []
        self.forwarded = 0

    def add_device(self, d: DeviceDescriptor) -> None:
        if d.device_id in self.devices:
            raise ValueError(f"duplicate device_id {d.device_id!r}")
        self.devices[d.device_id] = d

    def subscribe_local(self, callback: Callable[[AlertEvent], object]) -> None:
        self._listeners.append(callback)

    def _notify(self, kind: str, payload: dict) -> None:
        if self.observer is not None:
            self.observer(kind, payload)

    # -- ingest --------------------------------------------------------
    def ingest(self, r: TelemetryReading) -> list[AlertEvent]:
        if r.device_id not in self.devices:
            raise UnknownDeviceError(f"{r.device_id!r} is not registered with {self.gateway_id}")
        res = self.validator.accept(r)
        if not res.ok:
            raise InvalidReadingError(f"{r.device_id}#{r.seq}: {', '.join(res.violations)}")
        self._enqueue(r)
        fired = []
        for rule in self.rules:
            if rule.metric is not r.metric:
                continue
            key = (rule.rule_id, r.device_id)
            alert = evaluate_rule(rule, r, self._last_fire.get(key))
            if alert is None:
                continue
            self._last_fire[key] = r.ts
            fired.append(alert)
            self.alerts.append(alert)
            self._notify("alert", alert.to_dict())
            for cb in self._listeners:
                cb(alert)
            # cloud recipients get offline alerts after resync, flagged late
            self._enqueue(alert if self.link_up else replace(alert, delivered_late=True))
        return fired

    def _enqueue(self, entry: Entry) -> None:
        evicted = self.queue.push(entry)
        if evicted is not None:
            kind = "alert" if isinstance(evicted, AlertEvent) else "reading"
            ref = evicted.alert_id if isinstance(evicted, AlertEvent) else f"{evicted.device_id}#{evicted.seq}"
            audit = AlertEvent(
                alert_id=f"queue_overflow:{self.gateway_id}:{self.queue.dropped}",
                rule_id="queue_overflow",
                device_id=getattr(evicted, "device_id", ""),
                observed_value=ref,
                ts=self.clock(),
                severity=Severity.WARNING,
                recipients=frozenset({Role.OPERATOR}),
                message=f"dropped oldest queued {kind}",
            )
            self.audit.append(audit)
            self._notify("queue_overflow", audit.to_dict())
            for cb in self._listeners:
                cb(audit)
        self._pump()

    # -- link ----------------------------------------------------------
    def _pump(self) -> bool:
        """Forward queued entries head-first while the link holds. True if drained."""
        if self.uplink is None:
            return False
        while self.link_up and len(self.queue):
            entry = self.queue.peek()
            try:
                self.uplink.send(self.gateway_id, entry)
            except LinkError as exc:
                log.info("%s: uplink failed mid-drain (%s)", self.gateway_id, exc)
                self.link_up = False
                self._notify("link", {"gateway_id": self.gateway_id, "up": False, "cause": "send-failure",
                                      "queue_depth": len(self.queue)})
                return False
            self.queue.pop()
            self.forwarded += 1
        return self.link_up and not len(self.queue)

    def set_link(self, up: bool) -> LinkState:
        was_up = self.link_up
        self.link_up = up
        if was_up != up:
            self._notify("link", {"gateway_id": self.gateway_id, "up": up, "queue_depth": len(self.queue)})
        if up and not was_up:
            depth = len(self.queue)
            if self._pump():
                self._notify("drain", {"gateway_id": self.gateway_id, "entries": depth})
                for dev in self.devices:
                    self.uplink.reconcile(dev)
        return LinkState(self.link_up, len(self.queue))

    # -- policy --------------------------------------------------------
    def authorize_read(self, p: Principal, device_id: str, metric: Metric) -> Decision:
        d = self.devices.get(device_id)
        return self.policy.decide(p, d.owner if d else None, Metric(metric))

    def read(self, p: Principal, r: TelemetryReading,
             zone_of: Callable[[float, float], str] | None = None) -> Any:
        return redact(r.value, r.metric, self.authorize_read(p, r.device_id, r.metric), zone_of)

    def stats(self) -> dict:
        return {
            "gateway_id": self.gateway_id,
            "queue_depth": len(self.queue),
            "queue_high_water": self.queue.high_water,
            "queue_dropped": self.queue.dropped,
            "forwarded": self.forwarded,
            "alerts": len(self.alerts),
        }


@dataclass(frozen=True)
class GatewayConfig:
    gateway_id: str
    token: str
    devices: tuple[DeviceDescriptor, ...]
    rules: tuple[Rule, ...]
    policy: AccessPolicy
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GatewayConfig":
        gid = d["gateway_id"]
        devices = tuple(
            DeviceDescriptor(x["device_id"], DeviceKind(x["kind"]), x.get("owner", ""), gid)
            for x in d.get("devices", ())
        )
        policy = AccessPolicy.from_dict(d["policy"]) if "policy" in d else RPM_POLICY
        return cls(gid, d.get("token", ""), devices, tuple(Rule.from_dict(r) for r in d.get("rules", ())),
                   policy, int(d.get("queue_capacity", DEFAULT_QUEUE_CAPACITY)))

    @classmethod
    def load(cls, path) -> "GatewayConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def build(self, **kwargs) -> EdgeGateway:
        return EdgeGateway(self.gateway_id, self.devices, self.rules, self.policy, self.queue_capacity, **kwargs)


class BusUplink:
    """Forwards queued entries over a bus session (in-process or remote client).

    Readings go to ``telemetry/<device_id>/<metric>``, alerts to
    ``alerts/<gateway_id>/<severity>``; reconcile requests to ``shadow/<id>/sync``.
    """

    def __init__(self, session):
        self.session = session

    def send(self, gateway_id: str, entry: Entry) -> None:
        try:
            if isinstance(entry, AlertEvent):
                topic = f"alerts/{gateway_id}/{entry.severity.value}"
                doc = entry.to_dict()
                msg_id = f"alert:{entry.alert_id}"
            else:
                topic = f"telemetry/{entry.device_id}/{entry.metric.value}"
                doc = entry.to_dict()
                msg_id = None
            self.session.publish(topic, json.dumps(doc, sort_keys=True).encode(), msg_id)
        except Exception as exc:  # any transport failure means "not confirmed"
            raise LinkError(str(exc)) from exc

    def reconcile(self, device_id: str) -> None:
        self.session.publish(f"shadow/{device_id}/sync", b"{}")

