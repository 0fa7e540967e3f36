"""Versioned device shadows (virtual objects) with offline reconciliation."""
from __future__ import annotations

import copy
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

from .core import Metric, Principal, Role


class _Any:
    def __repr__(self) -> str:
        return "ANY"


ANY = _Any()

# desired state is configuration only, never commanded vitals
CONFIG_KEYS = frozenset({"sampling_period_s", "alerts_enabled", "door_threshold_deg"})
METRIC_KEYS = frozenset(m.value for m in Metric)
REPORTED_KEYS = METRIC_KEYS | CONFIG_KEYS


class ShadowError(Exception):
    pass


class UnknownDeviceError(ShadowError, KeyError):
    pass


class VersionConflictError(ShadowError):
    def __init__(self, device_id: str, expected: int, current: int):
        super().__init__(f"{device_id}: expected version {expected}, current {current}")
        self.expected = expected
        self.current = current


class PermissionDeniedError(ShadowError):
    pass


class InvalidKeyError(ShadowError, ValueError):
    pass


class Connectivity(str, Enum):
    ONLINE = "online"
    OFFLINE = "offline"


@dataclass
class DeviceShadow:
    device_id: str
    reported: dict[str, dict[str, Any]] = field(default_factory=dict)
    desired: dict[str, Any] = field(default_factory=dict)
    version: int = 0
    connectivity: Connectivity = Connectivity.OFFLINE
    last_sync_ts: int | None = None

    def reported_values(self) -> dict[str, Any]:
        return {k: e["value"] for k, e in self.reported.items()}

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "reported": self.reported,
            "desired": self.desired,
            "version": self.version,
            "connectivity": self.connectivity.value,
            "last_sync_ts": self.last_sync_ts,
        }


def compute_delta(desired: Mapping[str, Any], reported: Mapping[str, Any]) -> dict[str, Any]:
    """Desired keys whose value differs from (or is missing in) the reported values."""
    return {k: v for k, v in desired.items() if k not in reported or reported[k] != v}


def default_authorizer(principal: Principal, device_id: str, owner: str | None) -> bool:
    if principal.role in (Role.PRACTITIONER, Role.OPERATOR):
        return True
    return principal.role is Role.PATIENT and owner == principal.principal_id


class ShadowRegistry:
    """One shadow per device; per-device mutations are serialized.

    ``publish(topic, doc)`` is called for ``shadow/<id>/updated`` after every
    mutation and ``shadow/<id>/delta`` when a reconcile yields a non-empty
    delta. ``authorizer(principal, device_id, owner)`` gates desired writes.
    """

    def __init__(
        self,
        journal_path: str | Path | None = None,
        clock: Callable[[], int] = lambda: 0,
        publish: Callable[[str, dict], object] | None = None,
        authorizer: Callable[[Principal, str, str | None], bool] = default_authorizer,
    ):
        self._shadows: dict[str, DeviceShadow] = {}
        self._owners: dict[str, str | None] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._history: dict[str, list[int]] = {}
        self._lock = threading.Lock()
        self._journal_lock = threading.Lock()
        self.clock = clock
        self.publish = publish
        self.authorizer = authorizer
        self.journal_path = Path(journal_path) if journal_path else None
        self._journal = None
        if self.journal_path is not None:
            self._journal = open(self.journal_path, "a", encoding="utf-8")

    # -- lifecycle -----------------------------------------------------
    def register(self, device_id: str, owner: str | None = None) -> DeviceShadow:
        with self._lock:
            if device_id not in self._shadows:
                self._shadows[device_id] = DeviceShadow(device_id)
                self._locks[device_id] = threading.Lock()
                self._history[device_id] = []
            self._owners[device_id] = owner
            return copy.deepcopy(self._shadows[device_id])

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._shadows

    def devices(self) -> list[str]:
        return list(self._shadows)

    def get(self, device_id: str) -> DeviceShadow:
        shadow, lock = self._entry(device_id)
        with lock:
            return copy.deepcopy(shadow)

    def history(self, device_id: str) -> list[int]:
        """Versions produced by accepted mutations, in acceptance order."""
        self._entry(device_id)
        return list(self._history[device_id])

    def _entry(self, device_id: str) -> tuple[DeviceShadow, threading.Lock]:
        try:
            return self._shadows[device_id], self._locks[device_id]
        except KeyError:
            raise UnknownDeviceError(device_id) from None

    # -- mutations -----------------------------------------------------
    def update_reported(self, device_id: str, patch: Mapping[str, Any], expected_version: Any = ANY,
                        ts: int | None = None) -> DeviceShadow:
        bad = set(patch) - REPORTED_KEYS
        if bad:
            raise InvalidKeyError(f"invalid reported keys {sorted(bad)}")
        shadow, lock = self._entry(device_id)
        ts = self.clock() if ts is None else ts
        with lock:
            if expected_version is not ANY and expected_version != shadow.version:
                raise VersionConflictError(device_id, expected_version, shadow.version)
            for k, v in patch.items():
                shadow.reported[k] = {"value": v, "ts": ts}
            snap = self._commit(shadow, "reported", dict(patch), ts)
        self._emit(f"shadow/{device_id}/updated", snap.to_dict())
        return snap

    def set_desired(self, device_id: str, patch: Mapping[str, Any], principal: Principal, *,
                    expected_version: int) -> DeviceShadow:
        """Merge ``patch`` into desired state.

        The caller must pass the exact current version; ANY is refused so an
        operator never overwrites intent it has not seen.
        """
        shadow, lock = self._entry(device_id)
        if not self.authorizer(principal, device_id, self._owners.get(device_id)):
            raise PermissionDeniedError(f"{principal.principal_id} ({principal.role.value}) "
                                        f"may not write desired state of {device_id}")
        if expected_version is ANY or not isinstance(expected_version, int):
            raise VersionConflictError(device_id, -1, shadow.version)
        bad = set(patch) - CONFIG_KEYS
        if bad:
            raise InvalidKeyError(f"invalid desired keys {sorted(bad)}")
        ts = self.clock()
        with lock:
            if expected_version != shadow.version:
                raise VersionConflictError(device_id, expected_version, shadow.version)
            shadow.desired.update(patch)
            snap = self._commit(shadow, "desired", dict(patch), ts)
            online = shadow.connectivity is Connectivity.ONLINE
            delta = compute_delta(shadow.desired, shadow.reported_values()) if online else {}
        self._emit(f"shadow/{device_id}/updated", snap.to_dict())
        if delta:
            self._emit(f"shadow/{device_id}/delta", delta)
        return snap

    def reconcile(self, device_id: str) -> dict[str, Any]:
        """Mark the device online and return the desired-minus-reported delta.

        Connectivity is not a document mutation, so the version is unchanged.
        """
        shadow, lock = self._entry(device_id)
        ts = self.clock()
        with lock:
            shadow.connectivity = Connectivity.ONLINE
            shadow.last_sync_ts = ts
            delta = compute_delta(shadow.desired, shadow.reported_values())
            self._write_journal(ts, device_id, "reconcile", delta, shadow.version)
        if delta:
            self._emit(f"shadow/{device_id}/delta", delta)
        return delta

    def mark_offline(self, device_id: str) -> None:
        shadow, lock = self._entry(device_id)
        with lock:
            shadow.connectivity = Connectivity.OFFLINE

    def _commit(self, shadow: DeviceShadow, op: str, patch: dict, ts: int) -> DeviceShadow:
        shadow.version += 1
        self._history[shadow.device_id].append(shadow.version)
        self._write_journal(ts, shadow.device_id, op, patch, shadow.version)
        return copy.deepcopy(shadow)

    def _write_journal(self, ts: int, device_id: str, op: str, patch: dict, version: int) -> None:
        if self._journal is None:
            return
        line = json.dumps({"ts": ts, "device_id": device_id, "op": op, "patch": patch,
                           "version": version}, sort_keys=True)
        with self._journal_lock:
            self._journal.write(line + "\n")
            self._journal.flush()

    def _emit(self, topic: str, doc: dict) -> None:
        if self.publish is not None:
            self.publish(topic, doc)

    # -- persistence ---------------------------------------------------
    @classmethod
    def from_journal(cls, path: str | Path, **kwargs) -> "ShadowRegistry":
        """Rebuild registry state by replaying a journal, then keep appending to it."""
        reg = cls(**kwargs)
        path = Path(path)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ShadowError(f"{path}:{lineno}: {exc}") from None
                    reg._replay(rec)
        reg.journal_path = path
        reg._journal = open(path, "a", encoding="utf-8")
        return reg

    def _replay(self, rec: dict) -> None:
        dev = rec["device_id"]
        if dev not in self._shadows:
            self.register(dev)
        shadow = self._shadows[dev]
        op = rec["op"]
        if op == "reported":
            for k, v in rec["patch"].items():
                shadow.reported[k] = {"value": v, "ts": rec["ts"]}
        elif op == "desired":
            shadow.desired.update(rec["patch"])
        elif op == "reconcile":
            shadow.connectivity = Connectivity.ONLINE
            shadow.last_sync_ts = rec["ts"]
            return
        else:
            raise ShadowError(f"unknown journal op {op!r}")
        if rec["version"] != shadow.version + 1:
            raise ShadowError(f"{dev}: journal version gap {shadow.version} -> {rec['version']}")
        shadow.version = rec["version"]
        self._history[dev].append(shadow.version)
