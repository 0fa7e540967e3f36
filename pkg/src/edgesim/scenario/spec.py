"""Scenario documents: loading and referential / range validation."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from ..core import DeviceKind, Metric, Role
from ..gateway import Access, Comparator, Severity
from ..shadow import CONFIG_KEYS
from ..spatial import Zone
from .schedules import GENERATORS, sample_times


class ScenarioError(Exception):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.path}: {self.message}"


@dataclass
class Scenario:
    doc: dict
    source: str = "<memory>"

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def duration_ms(self) -> int:
        return int(self.doc["duration_ms"])


def packaged_scenarios() -> list[str]:
    root = resources.files("edgesim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(name_or_path: str | Path) -> Path | Any:
    """A filesystem path, or the name of a packaged scenario (``rpm_bob``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    res = resources.files("edgesim") / "scenarios" / f"{name_or_path}.json"
    if res.is_file():
        return res
    raise FileNotFoundError(f"no scenario file or packaged scenario named {name_or_path!r}")


def _locate(text: str, *needles: str) -> int | None:
    """1-based line of the first ``"key": "value"`` style occurrence, best effort."""
    for needle in needles:
        idx = text.find(needle)
        if idx >= 0:
            return text.count("\n", 0, idx) + 1
    return None


def _id_line(text: str, key: str, value: str) -> int | None:
    m = re.search(rf'"{re.escape(key)}"\s*:\s*"{re.escape(value)}"', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse(text: str, source: str = "<memory>") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([Diagnostic(source, f"parse error at column {exc.colno}: {exc.msg}", exc.lineno)])
    if not isinstance(doc, dict):
        raise ScenarioError([Diagnostic(source, "top level must be a JSON object", 1)])
    return Scenario(doc, source)


def load(name_or_path: str | Path) -> Scenario:
    path = resolve_path(name_or_path)
    text = path.read_text(encoding="utf-8")
    sc = parse(text, str(name_or_path))
    diags = validate_doc(sc.doc, text)
    if diags:
        raise ScenarioError(diags)
    return sc


def validate(spec_path: str | Path) -> list[Diagnostic]:
    """All diagnostics for a scenario file; empty means clean."""
    try:
        path = resolve_path(spec_path)
        text = path.read_text(encoding="utf-8")
    except (OSError, FileNotFoundError) as exc:
        return [Diagnostic(str(spec_path), str(exc))]
    try:
        sc = parse(text, str(spec_path))
    except ScenarioError as exc:
        return exc.diagnostics
    return validate_doc(sc.doc, text)


def validate_doc(doc: dict, text: str = "") -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def err(path: str, msg: str, line: int | None = None) -> None:
        diags.append(Diagnostic(path, msg, line))

    seed = doc.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        err("seed", "must be an integer", _locate(text, '"seed"'))
    duration = doc.get("duration_ms")
    if not isinstance(duration, int) or isinstance(duration, bool) or duration < 0:
        err("duration_ms", "must be a non-negative integer", _locate(text, '"duration_ms"'))
        duration = None

    gateways = doc.get("gateways", [])
    devices = doc.get("devices", [])
    if not isinstance(gateways, list):
        err("gateways", "must be a list")
        gateways = []
    if not isinstance(devices, list):
        err("devices", "must be a list")
        devices = []

    gw_ids: set[str] = set()
    for i, gw in enumerate(gateways):
        p = f"gateways[{i}]"
        gid = gw.get("gateway_id")
        if not isinstance(gid, str) or not gid:
            err(p, "missing gateway_id")
            continue
        line = _id_line(text, "gateway_id", gid)
        if gid in gw_ids:
            err(p, f"duplicate gateway_id {gid!r}", line)
        gw_ids.add(gid)
        cap = gw.get("queue_capacity", 1)
        if not isinstance(cap, int) or cap < 1:
            err(f"{p}.queue_capacity", "must be a positive integer", line)
        rule_ids = set()
        for j, r in enumerate(gw.get("rules", [])):
            rp = f"{p}.rules[{j}]"
            rid = r.get("rule_id")
            rline = _id_line(text, "rule_id", str(rid)) or line
            if not rid:
                err(rp, "missing rule_id", rline)
            elif rid in rule_ids:
                err(rp, f"duplicate rule_id {rid!r}", rline)
            rule_ids.add(rid)
            _enum(err, f"{rp}.metric", r.get("metric"), Metric, rline)
            comp = _enum(err, f"{rp}.comparator", r.get("comparator"), Comparator, rline)
            _enum(err, f"{rp}.severity", r.get("severity", "warning"), Severity, rline)
            for role in r.get("recipients", []):
                _enum(err, f"{rp}.recipients", role, Role, rline)
            if r.get("metric") == Metric.POSITION_FT.value:
                err(f"{rp}.metric", "threshold rules need a scalar metric", rline)
            if comp is Comparator.OUTSIDE_RANGE:
                lo, hi = r.get("lo"), r.get("hi")
                if not (_num(lo) and _num(hi) and lo < hi):
                    err(rp, "outside_range needs numeric lo < hi", rline)
            elif comp is not None and not _num(r.get("threshold")):
                err(f"{rp}.threshold", "must be a number", rline)
            if int(r.get("debounce_ms", 0)) < 0:
                err(f"{rp}.debounce_ms", "must be >= 0", rline)
        for role, perms in gw.get("policy", {}).items():
            _enum(err, f"{p}.policy", role, Role, line)
            for cls, level in perms.items():
                if cls not in ("vitals", "environment", "location"):
                    err(f"{p}.policy.{role}", f"unknown metric class {cls!r}", line)
                _enum(err, f"{p}.policy.{role}.{cls}", level, Access, line)

    dev_ids: set[str] = set()
    for i, dev in enumerate(devices):
        p = f"devices[{i}]"
        did = dev.get("device_id")
        if not isinstance(did, str) or not did:
            err(p, "missing device_id")
            continue
        line = _id_line(text, "device_id", did)
        if did in dev_ids:
            err(p, f"duplicate device_id {did!r}", line)
        dev_ids.add(did)
        _enum(err, f"{p}.kind", dev.get("kind"), DeviceKind, line)
        gid = dev.get("gateway")
        if gid not in gw_ids:
            err(f"{p}.gateway", f"device {did!r} references missing gateway {gid!r}", line)
        for j, sched in enumerate(dev.get("schedules", [])):
            _check_schedule(err, f"{p}.schedules[{j}]", did, sched, duration, line)

    for i, lf in enumerate(doc.get("link_faults", [])):
        p = f"link_faults[{i}]"
        if lf.get("gateway_id") not in gw_ids:
            err(p, f"link fault references missing gateway {lf.get('gateway_id')!r}")
        down, up = lf.get("down_ts"), lf.get("up_ts")
        if not (isinstance(down, int) and isinstance(up, int) and 0 <= down < up):
            err(p, "needs integer 0 <= down_ts < up_ts")
        elif duration is not None and up > duration:
            err(p, f"up_ts {up} beyond duration {duration}")

    for i, cmd in enumerate(doc.get("shadow_commands", [])):
        p = f"shadow_commands[{i}]"
        if cmd.get("device_id") not in dev_ids:
            err(p, f"shadow command references missing device {cmd.get('device_id')!r}")
        _enum(err, f"{p}.role", cmd.get("role"), Role)
        bad = set(cmd.get("patch", {})) - CONFIG_KEYS
        if bad:
            err(f"{p}.patch", f"desired keys must be configuration keys, got {sorted(bad)}")
        at = cmd.get("at_ms")
        if not isinstance(at, int) or at < 0 or (duration is not None and at > duration):
            err(f"{p}.at_ms", "must lie within [0, duration_ms]")

    fl = doc.get("fl_job")
    if fl is not None:
        _check_fl(err, fl, gw_ids, duration)

    for i, fac in enumerate(doc.get("facilities", [])):
        _check_facility(err, f"facilities[{i}]", fac, dev_ids, duration)
    return diags


def _num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _enum(err, path: str, value: Any, enum, line: int | None = None):
    try:
        return enum(value)
    except ValueError:
        err(path, f"invalid value {value!r}; expected one of {[e.value for e in enum]}", line)
        return None


def _check_schedule(err, p: str, did: str, sched: dict, duration: int | None, line: int | None) -> None:
    metric = _enum(err, f"{p}.metric", sched.get("metric"), Metric, line)
    if metric is None:
        return
    if "events" in sched:
        for k, ev in enumerate(sched["events"]):
            at = ev.get("at_ms")
            if not isinstance(at, int) or at < 0:
                err(f"{p}.events[{k}].at_ms", "must be a non-negative integer", line)
            elif duration is not None and at >= duration:
                err(f"{p}.events[{k}]", f"device {did!r} event at {at} beyond duration {duration}", line)
        return
    gen = sched.get("generator")
    if not isinstance(gen, dict) or gen.get("type") not in GENERATORS:
        err(f"{p}.generator", f"needs a generator with type in {sorted(GENERATORS)}", line)
        return
    if "cadence_ms" in sched and (not isinstance(sched["cadence_ms"], int) or sched["cadence_ms"] <= 0):
        err(f"{p}.cadence_ms", "must be a positive integer", line)
        return
    start, end = sched.get("start_ms", 0), sched.get("end_ms", duration)
    if duration is not None:
        if start < 0 or start > duration:
            err(f"{p}.start_ms", f"device {did!r} schedule starts at {start}, beyond duration {duration}", line)
        if end is not None and end > duration:
            err(f"{p}.end_ms", f"device {did!r} schedule ends at {end}, beyond duration {duration}", line)
    if gen["type"] == "uniform" and not (_num(gen.get("lo")) and _num(gen.get("hi")) and gen["lo"] <= gen["hi"]):
        err(f"{p}.generator", "uniform needs lo <= hi", line)
    if gen["type"] == "piecewise_linear":
        knots = gen.get("knots") or []
        if not knots or any(len(k) != 2 for k in knots) or [k[0] for k in knots] != sorted(k[0] for k in knots):
            err(f"{p}.generator.knots", "needs [[t_ms, value], ...] with increasing t", line)
    if gen["type"] == "series" and not gen.get("values"):
        err(f"{p}.generator.values", "must be non-empty", line)
    if (gen["type"] == "uniform_position") != (metric is Metric.POSITION_FT):
        err(f"{p}.generator", "uniform_position is the generator for position_ft (and only it)", line)
    if duration is not None and "cadence_ms" in sched and len(sample_times(sched, duration)) > 5_000_000:
        err(p, "schedule produces more than 5e6 readings", line)


def _check_fl(err, fl: dict, gw_ids: set[str], duration: int | None) -> None:
    p = "fl_job"
    lr = fl.get("learning_rate", 0.1)
    if not _num(lr) or lr <= 0:
        err(f"{p}.learning_rate", "must be > 0")
    if not isinstance(fl.get("local_epochs", 1), int) or fl.get("local_epochs", 1) < 1:
        err(f"{p}.local_epochs", "must be an integer >= 1")
    k = fl.get("minibatch_size", 32)
    if not isinstance(k, int) or k < 1:
        err(f"{p}.minibatch_size", "must be an integer >= 1")
    rounds = fl.get("rounds", 0)
    interval = fl.get("round_interval_ms", 60_000)
    if not isinstance(rounds, int) or rounds < 0:
        err(f"{p}.rounds", "must be a non-negative integer")
    elif not isinstance(interval, int) or interval <= 0:
        err(f"{p}.round_interval_ms", "must be a positive integer")
    elif duration is not None and rounds * interval > duration:
        err(f"{p}.rounds", f"{rounds} rounds x {interval} ms exceed duration {duration}")
    if fl.get("schedule", "sequential") not in ("sequential", "broadcast"):
        err(f"{p}.schedule", "must be 'sequential' or 'broadcast'")
    workers = fl.get("workers", [])
    if not workers:
        err(f"{p}.workers", "at least one worker required")
    for i, w in enumerate(workers):
        if w.get("gateway_id") not in gw_ids:
            err(f"{p}.workers[{i}]", f"worker {w.get('worker_id')!r} references missing gateway {w.get('gateway_id')!r}")
        n = w.get("samples", 0)
        if not isinstance(n, int) or n < 1:
            err(f"{p}.workers[{i}].samples", "must be a positive integer")
        elif isinstance(k, int) and k > n:
            err(f"{p}.workers[{i}].samples", f"minibatch_size {k} exceeds {n} samples")


def _check_facility(err, p: str, fac: dict, dev_ids: set[str], duration: int | None) -> None:
    if not fac.get("facility_id"):
        err(p, "missing facility_id")
    for tag in fac.get("tags", []):
        if tag not in dev_ids:
            err(f"{p}.tags", f"facility tag references missing device {tag!r}")
    if fac.get("threshold_ft", 6.0) <= 0:
        err(f"{p}.threshold_ft", "must be > 0")
    for key in ("max_threshold_1", "max_threshold_2"):
        if not isinstance(fac.get(key, 1), int) or fac.get(key, 1) < 1:
            err(f"{p}.{key}", "must be an integer >= 1")
    for key in ("snapshot_cadence_ms", "plan_cadence_ms"):
        v = fac.get(key, 60_000)
        if not isinstance(v, int) or v <= 0:
            err(f"{p}.{key}", "must be a positive integer")
    for i, ev in enumerate(fac.get("presence_events", [])):
        _enum(err, f"{p}.presence_events[{i}].zone", ev.get("zone"), Zone)
        at = ev.get("at_ms")
        if not isinstance(at, int) or at < 0 or (duration is not None and at >= duration):
            err(f"{p}.presence_events[{i}].at_ms", f"must lie within [0, {duration})")
