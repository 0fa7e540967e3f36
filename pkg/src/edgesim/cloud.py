"""Cloud-side hub: consumes forwarded telemetry and alerts from the bus."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from .bus import BusMessage, Session
from .core import Metric, TelemetryReading
from .gateway import AlertEvent
from .shadow import ShadowRegistry, UnknownDeviceError


class CloudHub:
    """Journals readings (deduplicated on ``(device_id, seq)``), mirrors them
    into the shadow registry and collects alerts forwarded by gateways.
    """

    def __init__(self, session: Session, registry: ShadowRegistry,
                 journal_path: str | Path | None = None,
                 observer: Callable[[str, dict], object] | None = None):
        self.session = session
        self.registry = registry
        self.observer = observer
        self.readings: list[TelemetryReading] = []
        self.alerts: list[AlertEvent] = []
        self.duplicates = 0
        self._seen: set[tuple[str, int]] = set()
        self._seen_alerts: set[str] = set()
        self._journal = open(journal_path, "a", encoding="utf-8") if journal_path else None
        for pattern in ("telemetry/#", "alerts/+/+", "shadow/+/sync"):
            session.subscribe(pattern)
        session.set_handler(self._on_message)

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    def _on_message(self, msg: BusMessage) -> None:
        head = msg.topic.split("/", 1)[0]
        if head == "telemetry":
            self._on_reading(TelemetryReading.from_dict(json.loads(msg.payload)))
        elif head == "alerts":
            self._on_alert(AlertEvent.from_dict(json.loads(msg.payload)))
        elif head == "shadow":
            device_id = msg.topic.split("/")[1]
            try:
                delta = self.registry.reconcile(device_id)
            except UnknownDeviceError:
                return
            self._emit("reconcile", {"device_id": device_id, "delta": delta})

    def _on_reading(self, r: TelemetryReading) -> None:
        key = (r.device_id, r.seq)
        if key in self._seen:
            self.duplicates += 1
            self._emit("cloud_duplicate", {"device_id": r.device_id, "seq": r.seq})
            return
        self._seen.add(key)
        self.readings.append(r)
        if self._journal is not None:
            self._journal.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
        self._emit("cloud_ingest", {"device_id": r.device_id, "seq": r.seq, "ts": r.ts,
                                    "metric": r.metric.value})
        if r.device_id in self.registry:
            value = list(r.value) if r.metric is Metric.POSITION_FT else r.value
            shadow = self.registry.update_reported(r.device_id, {r.metric.value: value}, ts=r.ts)
            self._emit("shadow", {"device_id": r.device_id, "op": "reported", "version": shadow.version})

    def _on_alert(self, a: AlertEvent) -> None:
        if a.alert_id in self._seen_alerts:
            self.duplicates += 1
            return
        self._seen_alerts.add(a.alert_id)
        self.alerts.append(a)
        self._emit("cloud_alert", a.to_dict())

    def _emit(self, kind: str, payload: dict) -> None:
        if self.observer is not None:
            self.observer(kind, payload)

    def readings_for(self, device_id: str) -> list[TelemetryReading]:
        return [r for r in self.readings if r.device_id == device_id]
