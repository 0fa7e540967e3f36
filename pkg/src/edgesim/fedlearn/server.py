"""Parameter server applying worker deltas additively and asynchronously."""
from __future__ import annotations

import json
import math
import threading
from pathlib import Path

import numpy as np

from .model import DimensionMismatchError, GradientUpdate, ModelState

DEFAULT_STALENESS_LIMIT = 8


def aggregate(server: ModelState, u: GradientUpdate, staleness_limit: float = DEFAULT_STALENESS_LIMIT) -> ModelState:
    """Pure form of the server update; a too-stale update returns ``server`` unchanged."""
    if u.delta.shape != server.weights.shape:
        raise DimensionMismatchError(f"delta has shape {u.delta.shape}, server {server.weights.shape}")
    if server.version - u.base_version > staleness_limit:
        return server
    return ModelState(server.weights + u.delta, server.version + 1)


class ParameterServer:
    """Serializes aggregate/download; keeps a journal of every update it saw."""

    def __init__(self, initial: ModelState, staleness_limit: float = DEFAULT_STALENESS_LIMIT,
                 journal_path: str | Path | None = None):
        self._state = initial
        self.initial = initial
        self.staleness_limit = math.inf if staleness_limit is None else staleness_limit
        self.stale_discarded = 0
        self.journal: list[dict] = []
        self._journal_path = Path(journal_path) if journal_path else None
        self._lock = threading.Lock()

    @property
    def version(self) -> int:
        return self._state.version

    def download(self) -> ModelState:
        # ModelState is immutable, so handing out the reference is a snapshot
        with self._lock:
            return self._state

    def aggregate(self, u: GradientUpdate) -> ModelState:
        with self._lock:
            new = aggregate(self._state, u, self.staleness_limit)
            accepted = new is not self._state
            if not accepted:
                self.stale_discarded += 1
            self._state = new
            rec = {
                "version": new.version,
                "worker_id": u.worker_id,
                "base_version": u.base_version,
                "accepted": accepted,
                "delta_norm": float(np.linalg.norm(u.delta)),
                "delta": [float(x) for x in u.delta],
            }
            self.journal.append(rec)
            if self._journal_path is not None:
                with open(self._journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec) + "\n")
            return new


def replay_journal(initial: ModelState, journal: list[dict], upto_version: int | None = None) -> ModelState:
    """Rebuild server state from the initial model and the accepted journal deltas."""
    w = initial.weights.copy()
    version = initial.version
    for rec in journal:
        if not rec["accepted"]:
            continue
        if upto_version is not None and rec["version"] > upto_version:
            break
        w = w + np.asarray(rec["delta"])
        version = rec["version"]
    return ModelState(w, version)


def load_journal(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
