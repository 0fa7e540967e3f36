"""Event log container, timeline rendering and summary report."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Iterable

KINDS = frozenset({
    "start", "stop", "reading", "rejected", "alert", "notification", "queue_overflow", "link", "drain",
    "cloud_ingest", "cloud_duplicate", "cloud_alert", "shadow", "reconcile", "fl_round",
    "distancing", "sanitize_plan",
})
FILTER_KEYS = frozenset({"kind", "source"})


class MalformedLogError(ValueError):
    pass


class EventLog:
    def __init__(self) -> None:
        self.records: list[dict] = []

    def record(self, ts: int, kind: str, source: str, payload: dict) -> None:
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self.records.append({"ts": ts, "kind": kind, "source": source, "payload": payload})

    def dumps(self) -> str:
        return "".join(_line(r) + "\n" for r in self.records)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]


def _line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def read_log(path: str | Path) -> list[dict]:
    """Parse an events.jsonl file, checking shape and timestamp order."""
    records = []
    last_ts = None
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLogError(f"line {n}: {exc.msg}") from None
            if not isinstance(rec, dict) or not {"ts", "kind", "source", "payload"} <= rec.keys():
                raise MalformedLogError(f"line {n}: record needs ts, kind, source, payload")
            if not isinstance(rec["ts"], int):
                raise MalformedLogError(f"line {n}: ts must be an integer")
            if last_ts is not None and rec["ts"] < last_ts:
                raise MalformedLogError(f"line {n}: ts {rec['ts']} decreases from {last_ts}")
            last_ts = rec["ts"]
            records.append(rec)
    return records


def fmt_ts(ms: int) -> str:
    days, rem = divmod(ms, 86_400_000)
    h, rem = divmod(rem, 3_600_000)
    m, rem = divmod(rem, 60_000)
    s, ms_ = divmod(rem, 1000)
    return f"d{days:02d} {h:02d}:{m:02d}:{s:02d}.{ms_:03d}"


def _summary(rec: dict) -> str:
    p = rec["payload"]
    k = rec["kind"]
    if k == "reading":
        flag = " (offline)" if p.get("offline") else ""
        return f"{p['metric']}={_v(p['value'])} seq={p['seq']}{flag}"
    if k in ("alert", "notification", "cloud_alert"):
        msg = f" \"{p['message']}\"" if p.get("message") else ""
        late = " late" if p.get("delivered_late") else ""
        return (f"[{p['severity']}] {p['rule_id']} on {p['device_id']} value={_v(p['observed_value'])}"
                f"{msg} -> {','.join(p['recipients'])}{late}")
    if k == "link":
        return f"{p['gateway_id']} link {'UP' if p['up'] else 'DOWN'} queue={p['queue_depth']}"
    if k == "fl_round":
        return (f"round {p['round']} v{p['version']} loss={p['loss']:.6f} acc={p['accuracy']:.4f} "
                f"workers={p['accepted']}/{p['participants']}")
    if k == "distancing":
        return f"{p['a']}<->{p['b']} {p['distance_ft']:.2f} ft"
    if k == "sanitize_plan":
        return f"plan {p['plan']} counts IZ={p['number_IZ']} LZ={p['number_LZ']} SZ={p['number_SZ']}"
    return json.dumps(p, sort_keys=True, separators=(",", ":"))


def _v(value) -> str:
    if isinstance(value, list):
        return "(" + ", ".join(f"{x:g}" for x in value) + ")"
    return f"{value:g}" if isinstance(value, (int, float)) else str(value)


def render(records: Iterable[dict], **filters: str | None) -> list[str]:
    """Chronological human-readable lines, optionally filtered by kind and/or source."""
    unknown = set(filters) - FILTER_KEYS
    if unknown:
        raise ValueError(f"unknown filter key(s) {sorted(unknown)}; use {sorted(FILTER_KEYS)}")
    out = []
    for rec in records:
        if filters.get("kind") and rec["kind"] != filters["kind"]:
            continue
        if filters.get("source") and rec["source"] != filters["source"]:
            continue
        out.append(f"{fmt_ts(rec['ts'])}  {rec['kind']:<14} {rec['source']:<14} {_summary(rec)}")
    return out


def replay(log_path: str | Path, **filters: str | None) -> list[str]:
    return render(read_log(log_path), **filters)


def summarize(records: list[dict]) -> dict:
    """Aggregate counts from a log; the log is the only input."""
    start = next((r for r in records if r["kind"] == "start"), None)
    stop = next((r for r in records if r["kind"] == "stop"), None)
    alerts: Counter[str] = Counter({rid: 0 for rid in (start["payload"].get("rules", {}) if start else {})})
    severity: Counter[str] = Counter()
    readings: Counter[str] = Counter()
    offline_keys: set[tuple[str, int]] = set()
    emitted: set[tuple[str, int]] = set()
    cloud: set[tuple[str, int]] = set()
    fl_trace = []
    counts = Counter(r["kind"] for r in records)
    for r in records:
        k, p = r["kind"], r["payload"]
        if k in ("alert", "notification"):
            alerts[p["rule_id"]] += 1
            severity[p["severity"]] += 1
        elif k == "reading":
            readings[p["device_id"]] += 1
            key = (p["device_id"], p["seq"])
            emitted.add(key)
            if p.get("offline"):
                offline_keys.add(key)
        elif k == "cloud_ingest":
            cloud.add((p["device_id"], p["seq"]))
        elif k == "fl_round":
            fl_trace.append({key: p[key] for key in ("round", "version", "loss", "accuracy", "accepted", "stale")})
    gw_stats = stop["payload"].get("gateways", {}) if stop else {}
    queued_at_stop = sum(g.get("queued_readings", 0) for g in gw_stats.values())
    dropped = sum(g.get("queue_dropped", 0) for g in gw_stats.values())
    undelivered = len(emitted - cloud)
    return {
        "alerts": dict(sorted(alerts.items())),
        "alerts_by_severity": dict(sorted(severity.items())),
        "readings": dict(sorted(readings.items())),
        "readings_total": sum(readings.values()),
        "cloud_readings": len(cloud),
        "offline": {
            "windows": sum(1 for r in records if r["kind"] == "link" and not r["payload"]["up"]),
            "queued_offline": len(offline_keys),
            "recovered_readings": len(offline_keys & cloud),
            "lost": max(undelivered - queued_at_stop, 0),
            "pending_at_stop": queued_at_stop,
            "dropped_overflow": dropped,
            "duplicates_suppressed": counts["cloud_duplicate"],
        },
        "queues": {gid: {"high_water": g.get("queue_high_water", 0), "dropped": g.get("queue_dropped", 0)}
                   for gid, g in sorted(gw_stats.items())},
        "shadow_mutations": sum(1 for r in records if r["kind"] == "shadow" and "error" not in r["payload"]),
        "shadow_rejections": sum(1 for r in records if r["kind"] == "shadow" and "error" in r["payload"]),
        "distancing_alerts": counts["distancing"],
        "sanitize_plans": counts["sanitize_plan"],
        "fl": {"rounds": len(fl_trace), "trace": fl_trace,
               "final_accuracy": fl_trace[-1]["accuracy"] if fl_trace else None} if fl_trace else None,
    }


def report(log_path: str | Path) -> dict:
    return summarize(read_log(log_path))
