"""Shared domain vocabulary: devices, metrics, readings, principals, simulated time."""
from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Union


class DeviceKind(str, Enum):
    OXIMETER = "oximeter"
    BP_MONITOR = "bp_monitor"
    THERMOMETER = "thermometer"
    DOOR_SENSOR = "door_sensor"
    MOTION_SENSOR = "motion_sensor"
    POSITION_TAG = "position_tag"
    WEARABLE = "wearable"
    CAMERA = "camera"
    SANITIZER_ROBOT = "sanitizer_robot"


class Metric(str, Enum):
    BODY_TEMP_F = "body_temp_F"
    SPO2_PCT = "spo2_pct"
    BP_SYSTOLIC = "bp_systolic_mmHg"
    BP_DIASTOLIC = "bp_diastolic_mmHg"
    PULSE_BPM = "pulse_bpm"
    DOOR_ANGLE_DEG = "door_angle_deg"
    PRESENCE_FLAG = "presence_flag"
    POSITION_FT = "position_ft"


class MetricClass(str, Enum):
    VITALS = "vitals"
    ENVIRONMENT = "environment"
    LOCATION = "location"


METRIC_CLASS: dict[Metric, MetricClass] = {
    Metric.BODY_TEMP_F: MetricClass.VITALS,
    Metric.SPO2_PCT: MetricClass.VITALS,
    Metric.BP_SYSTOLIC: MetricClass.VITALS,
    Metric.BP_DIASTOLIC: MetricClass.VITALS,
    Metric.PULSE_BPM: MetricClass.VITALS,
    Metric.DOOR_ANGLE_DEG: MetricClass.ENVIRONMENT,
    Metric.PRESENCE_FLAG: MetricClass.ENVIRONMENT,
    Metric.POSITION_FT: MetricClass.LOCATION,
}

# inclusive physical ranges; metrics not listed only need finite values
METRIC_RANGE: dict[Metric, tuple[float, float]] = {
    Metric.SPO2_PCT: (0.0, 100.0),
    Metric.DOOR_ANGLE_DEG: (0.0, 180.0),
    Metric.BODY_TEMP_F: (80.0, 115.0),
}


class Role(str, Enum):
    PATIENT = "patient"
    FAMILY = "family"
    PRACTITIONER = "practitioner"
    LOCAL_AUTHORITY = "local_authority"
    OPERATOR = "operator"


@dataclass(frozen=True)
class DeviceDescriptor:
    device_id: str
    kind: DeviceKind
    owner: str
    home_gateway: str


@dataclass(frozen=True)
class Principal:
    principal_id: str
    role: Role


Value = Union[float, tuple[float, float]]


@dataclass(frozen=True)
class TelemetryReading:
    device_id: str
    metric: Metric
    value: Value
    ts: int
    seq: int

    def to_dict(self) -> dict:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return {
            "device_id": self.device_id,
            "metric": self.metric.value,
            "value": value,
            "ts": self.ts,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TelemetryReading":
        value = d["value"]
        if isinstance(value, (list, tuple)):
            value = (float(value[0]), float(value[1]))
        return cls(d["device_id"], Metric(d["metric"]), value, int(d["ts"]), int(d["seq"]))


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_reading(
    r: TelemetryReading, last_seq: int | None = None, last_ts: int | None = None
) -> ValidationResult:
    """Check a reading against the metric invariants.

    ``last_seq`` / ``last_ts`` are the most recently accepted values for the
    same device (``None`` when nothing was accepted yet). The function is
    pure; :class:`ReadingValidator` keeps that per-device history.
    """
    problems: list[str] = []
    if r.metric is Metric.POSITION_FT:
        if not (isinstance(r.value, tuple) and len(r.value) == 2):
            problems.append("position must be an (x, y) pair")
        elif not all(math.isfinite(v) for v in r.value):
            problems.append("position not finite")
    elif isinstance(r.value, tuple) or not isinstance(r.value, (int, float)):
        problems.append(f"{r.metric.value} must be a scalar")
    elif not math.isfinite(r.value):
        problems.append(f"{r.metric.value} not finite")
    elif r.metric in METRIC_RANGE:
        lo, hi = METRIC_RANGE[r.metric]
        if not lo <= r.value <= hi:
            short = r.metric.value.split("_")[0]
            problems.append(f"{short} out of [{lo:g},{hi:g}]")
    if r.ts < 0:
        problems.append("negative ts")
    if last_seq is not None and r.seq <= last_seq:
        problems.append("non-increasing seq")
    if last_ts is not None and r.ts < last_ts:
        problems.append("decreasing ts")
    return ValidationResult(tuple(problems))


class ReadingValidator:
    """Validates a reading stream, remembering the last accepted (seq, ts) per device."""

    def __init__(self) -> None:
        self._last: dict[str, tuple[int, int]] = {}

    def check(self, r: TelemetryReading) -> ValidationResult:
        last = self._last.get(r.device_id)
        return validate_reading(r, *(last if last else (None, None)))

    def accept(self, r: TelemetryReading) -> ValidationResult:
        res = self.check(r)
        if res.ok:
            self._last[r.device_id] = (r.seq, r.ts)
        return res


class ClockMode(str, Enum):
    SIMULATED = "simulated"
    REALTIME = "realtime"


@dataclass(order=True)
class _Timer:
    due: int
    order: int
    callback: Callable[[int], object] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class SimClock:
    """Single-owner simulated clock with a timer queue.

    Timers due inside an advance window fire in timestamp order, ties in
    registration order. A callback may schedule further timers; those fire
    in the same advance if they fall inside the window.
    """

    def __init__(self, now: int = 0, mode: ClockMode = ClockMode.SIMULATED, speed: float = 1.0):
        if now < 0:
            raise ValueError("clock cannot start before 0")
        self._now = now
        self.mode = ClockMode(mode)
        self.speed = speed
        self._timers: list[_Timer] = []
        self._order = 0
        self._lock = threading.RLock()

    @property
    def now(self) -> int:
        return self._now

    def schedule(self, due: int, callback: Callable[[int], object]) -> _Timer:
        with self._lock:
            if due < self._now:
                raise ValueError(f"cannot schedule at {due} before now={self._now}")
            t = _Timer(due, self._order, callback)
            self._order += 1
            heapq.heappush(self._timers, t)
            return t

    def schedule_in(self, delay: int, callback: Callable[[int], object]) -> _Timer:
        return self.schedule(self._now + delay, callback)

    @staticmethod
    def cancel(timer: _Timer) -> None:
        timer.cancelled = True

    def pending(self) -> int:
        return sum(1 for t in self._timers if not t.cancelled)

    def next_due(self) -> int | None:
        with self._lock:
            while self._timers and self._timers[0].cancelled:
                heapq.heappop(self._timers)
            return self._timers[0].due if self._timers else None

    def advance(self, delta_ms: int) -> "SimClock":
        if not isinstance(delta_ms, int) or delta_ms <= 0:
            raise ValueError("delta_ms must be a positive integer")
        with self._lock:
            end = self._now + delta_ms
            while self._timers and self._timers[0].due <= end:
                t = heapq.heappop(self._timers)
                if t.cancelled:
                    continue
                self._sleep_until(t.due)
                self._now = t.due
                t.callback(t.due)
            self._sleep_until(end)
            self._now = end
        return self

    def run_until(self, end: int) -> "SimClock":
        """Advance to ``end`` (no-op if already there)."""
        if end > self._now:
            self.advance(end - self._now)
        return self

    def _sleep_until(self, target: int) -> None:
        if self.mode is ClockMode.REALTIME and target > self._now:
            time.sleep((target - self._now) / 1000.0 / self.speed)


def advance_clock(c: SimClock, delta_ms: int) -> SimClock:
    return c.advance(delta_ms)
