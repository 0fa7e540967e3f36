"""Device reading schedules: cadence + value generator, or explicit events."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from ..core import Metric

VITALS_CADENCE_MS = 3 * 3600 * 1000
GENERATORS = frozenset({"constant", "uniform", "piecewise_linear", "series", "uniform_position"})
VITALS = frozenset({Metric.BODY_TEMP_F, Metric.SPO2_PCT, Metric.BP_SYSTOLIC, Metric.BP_DIASTOLIC,
                    Metric.PULSE_BPM})


def stable_rng(seed: int, *parts: str | int) -> np.random.Generator:
    """Generator keyed on the seed and string parts, independent of PYTHONHASHSEED."""
    words = [int(seed) & 0xFFFFFFFF]
    for p in parts:
        words.append(int.from_bytes(hashlib.sha256(str(p).encode()).digest()[:4], "big"))
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass(frozen=True)
class PlannedReading:
    ts: int
    metric: Metric
    value: Any


def _round(v: float, decimals: int | None) -> float:
    return float(round(v, decimals)) if decimals is not None else float(v)


def _interp(knots: list[list[float]], t: float) -> float:
    ts = [k[0] for k in knots]
    vs = [k[1] for k in knots]
    return float(np.interp(t, ts, vs))


def sample_times(sched: Mapping[str, Any], duration_ms: int) -> list[int]:
    metric = Metric(sched["metric"])
    cadence = int(sched.get("cadence_ms", VITALS_CADENCE_MS if metric in VITALS else 60_000))
    start = int(sched.get("start_ms", 0))
    end = int(sched.get("end_ms", duration_ms))
    return list(range(start, end, cadence))


def expand(sched: Mapping[str, Any], duration_ms: int, rng: np.random.Generator) -> list[PlannedReading]:
    """All readings of one schedule entry, in time order."""
    metric = Metric(sched["metric"])
    if "events" in sched:
        out = []
        for ev in sched["events"]:
            v = ev["value"]
            if metric is Metric.POSITION_FT:
                v = (float(v[0]), float(v[1]))
            out.append(PlannedReading(int(ev["at_ms"]), metric, v))
        return sorted(out, key=lambda p: p.ts)
    gen = sched["generator"]
    kind = gen["type"]
    dec = gen.get("decimals")
    times = sample_times(sched, duration_ms)
    if kind == "constant":
        vals = [gen["value"]] * len(times)
    elif kind == "uniform":
        vals = [_round(v, dec) for v in rng.uniform(gen["lo"], gen["hi"], size=len(times))]
    elif kind == "piecewise_linear":
        vals = [_round(_interp(gen["knots"], t), dec) for t in times]
    elif kind == "series":
        series = gen["values"]
        vals = [series[i % len(series)] for i in range(len(times))]
    elif kind == "uniform_position":
        xs = rng.uniform(gen["x"][0], gen["x"][1], size=len(times))
        ys = rng.uniform(gen["y"][0], gen["y"][1], size=len(times))
        vals = [(_round(x, dec), _round(y, dec)) for x, y in zip(xs, ys)]
    else:
        raise ValueError(f"unknown generator {kind!r}")
    return [PlannedReading(t, metric, v) for t, v in zip(times, vals)]


def plan_device(device: Mapping[str, Any], duration_ms: int, seed: int) -> list[PlannedReading]:
    """Merge a device's schedules; equal timestamps keep schedule-list order."""
    tagged = []
    for idx, sched in enumerate(device.get("schedules", ())):
        rng = stable_rng(seed, device["device_id"], idx)
        for k, p in enumerate(expand(sched, duration_ms, rng)):
            tagged.append((p.ts, idx, k, p))
    tagged.sort(key=lambda x: x[:3])
    return [p for *_, p in tagged]
