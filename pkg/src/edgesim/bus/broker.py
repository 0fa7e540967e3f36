"""In-process topic broker with token sessions and at-least-once delivery.

Client state (subscriptions, queued and in-flight messages) outlives a
connection, so a subscriber that reconnects receives everything that was
enqueued for it and not acknowledged. Receivers deduplicate on ``msg_id``.
"""
from __future__ import annotations

import logging
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable

from .topics import InvalidTopicError, match, validate_pattern, validate_topic

log = logging.getLogger(__name__)

DEFAULT_QUEUE_LIMIT = 4096


class BusError(Exception):
    pass


class AuthError(BusError):
    pass


class NotConnectedError(BusError):
    pass


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: bytes
    publisher_id: str
    msg_id: str
    ts: int


@dataclass(frozen=True)
class Ack:
    msg_id: str
    deliveries: int
    duplicate: bool = False


@dataclass(frozen=True)
class SubAck:
    pattern: str


@dataclass
class _ClientState:
    client_id: str
    subscriptions: list[str] = field(default_factory=list)
    pending: deque = field(default_factory=deque)
    inflight: "OrderedDict[str, BusMessage]" = field(default_factory=OrderedDict)
    session: "Session | None" = None
    dispatching: bool = False

    def depth(self) -> int:
        return len(self.pending) + len(self.inflight)


class Session:
    """A live, authenticated connection for one client_id."""

    def __init__(self, broker: "Broker", client_id: str):
        self.broker = broker
        self.client_id = client_id
        self.connected = True
        self.close_reason: str | None = None
        self._handler: Callable[[BusMessage], object] | None = None
        self._auto_ack = True
        self.on_close: Callable[[str], object] | None = None

    @property
    def subscriptions(self) -> frozenset[str]:
        return frozenset(self.broker._clients[self.client_id].subscriptions)

    def publish(self, topic: str, payload: bytes | str, msg_id: str | None = None) -> Ack:
        if isinstance(payload, str):
            payload = payload.encode()
        return self.broker.publish(self, topic, payload, msg_id)

    def subscribe(self, pattern: str) -> SubAck:
        return self.broker.subscribe(self, pattern)

    def unsubscribe(self, pattern: str) -> None:
        self.broker.unsubscribe(self, pattern)

    def set_handler(self, handler: Callable[[BusMessage], object] | None, auto_ack: bool = True) -> None:
        """Push delivery. With ``auto_ack`` a message is acked once the handler returns."""
        self._handler = handler
        self._auto_ack = auto_ack
        if handler is not None:
            self.broker._dispatch(self.client_id)

    def receive(self, max_messages: int | None = None) -> list[BusMessage]:
        """Pull delivery: move queued messages in flight and return them."""
        return self.broker._take(self, max_messages)

    def ack(self, msg_id: str) -> None:
        self.broker._ack(self, msg_id)

    def close(self) -> None:
        self.broker.disconnect(self, "client-close")


class Broker:
    def __init__(
        self,
        clock: Callable[[], int] = lambda: 0,
        queue_limit: int = DEFAULT_QUEUE_LIMIT,
    ):
        self._clock = clock
        self.queue_limit = queue_limit
        self._registry: dict[str, str] = {}
        self._clients: dict[str, _ClientState] = {}
        self._seen: set[tuple[str, str]] = set()
        self._counter = 0
        self._lock = threading.RLock()
        self.audit: list[dict] = []

    # -- provisioning --------------------------------------------------
    def register(self, client_id: str, token: str) -> None:
        with self._lock:
            self._registry[client_id] = token

    def connect(self, client_id: str, token: str) -> Session:
        with self._lock:
            if self._registry.get(client_id) != token or client_id not in self._registry:
                self._audit("auth-failure", client_id)
                raise AuthError(f"authentication failed for {client_id!r}")
            state = self._clients.setdefault(client_id, _ClientState(client_id))
            if state.session is not None and state.session.connected:
                self._close_session(state, "replaced")
            # unacked messages go back to the head of the queue, original order
            if state.inflight:
                state.pending.extendleft(reversed(list(state.inflight.values())))
                state.inflight.clear()
            session = Session(self, client_id)
            state.session = session
            return session

    def disconnect(self, session: Session, reason: str = "client-close") -> None:
        with self._lock:
            state = self._clients.get(session.client_id)
            if state is not None and state.session is session and session.connected:
                self._close_session(state, reason)

    def _close_session(self, state: _ClientState, reason: str) -> None:
        s = state.session
        s.connected = False
        s.close_reason = reason
        state.session = None
        if s.on_close is not None:
            s.on_close(reason)

    def _audit(self, event: str, client_id: str, **extra) -> None:
        rec = {"ts": self._clock(), "event": event, "client_id": client_id, **extra}
        self.audit.append(rec)
        log.info("bus audit %s", rec)

    def _check(self, session: Session) -> _ClientState:
        state = self._clients.get(session.client_id)
        if not session.connected or state is None or state.session is not session:
            raise NotConnectedError(f"session for {session.client_id!r} is not connected")
        return state

    # -- operations ----------------------------------------------------
    def subscribe(self, session: Session, pattern: str) -> SubAck:
        with self._lock:
            state = self._check(session)
            validate_pattern(pattern)
            if pattern not in state.subscriptions:
                state.subscriptions.append(pattern)
            return SubAck(pattern)

    def unsubscribe(self, session: Session, pattern: str) -> None:
        with self._lock:
            state = self._check(session)
            if pattern in state.subscriptions:
                state.subscriptions.remove(pattern)

    def publish(self, session: Session, topic: str, payload: bytes, msg_id: str | None = None) -> Ack:
        with self._lock:
            self._check(session)
            validate_topic(topic)
            if msg_id is not None:
                key = (session.client_id, msg_id)
                if key in self._seen:
                    return Ack(msg_id, 0, duplicate=True)
                self._seen.add(key)
            self._counter += 1
            gid = f"m{self._counter}"
            msg = BusMessage(topic, bytes(payload), session.client_id, gid, self._clock())
            targets = [
                st for st in self._clients.values()
                if any(match(p, topic) for p in st.subscriptions)
            ]
            delivered = 0
            for st in targets:
                if st.depth() >= self.queue_limit:
                    self._overflow(st)
                    continue
                st.pending.append(msg)
                delivered += 1
            for st in targets:
                self._dispatch(st.client_id)
            return Ack(msg_id if msg_id is not None else gid, delivered)

    def _overflow(self, state: _ClientState) -> None:
        self._audit("queue-overflow", state.client_id, dropped=state.depth())
        state.pending.clear()
        state.inflight.clear()
        if state.session is not None:
            self._close_session(state, "overflow")

    # -- delivery ------------------------------------------------------
    def _dispatch(self, client_id: str) -> None:
        with self._lock:
            state = self._clients.get(client_id)
            if state is None or state.dispatching:
                return
            state.dispatching = True
            try:
                while state.pending:
                    s = state.session
                    if s is None or not s.connected or s._handler is None:
                        return
                    msg = state.pending.popleft()
                    state.inflight[msg.msg_id] = msg
                    try:
                        s._handler(msg)
                    except Exception:
                        # stays in flight; redelivered on reconnect
                        log.exception("handler for %s failed on %s", client_id, msg.msg_id)
                        continue
                    if s._auto_ack:
                        state.inflight.pop(msg.msg_id, None)
            finally:
                state.dispatching = False

    def _take(self, session: Session, max_messages: int | None) -> list[BusMessage]:
        with self._lock:
            state = self._check(session)
            out = []
            while state.pending and (max_messages is None or len(out) < max_messages):
                msg = state.pending.popleft()
                state.inflight[msg.msg_id] = msg
                out.append(msg)
            return out

    def _ack(self, session: Session, msg_id: str) -> None:
        with self._lock:
            state = self._check(session)
            state.inflight.pop(msg_id, None)

    # -- introspection -------------------------------------------------
    def queue_depth(self, client_id: str) -> int:
        with self._lock:
            st = self._clients.get(client_id)
            return st.depth() if st else 0

    def is_connected(self, client_id: str) -> bool:
        st = self._clients.get(client_id)
        return bool(st and st.session and st.session.connected)


__all__ = [
    "Ack",
    "AuthError",
    "Broker",
    "BusError",
    "BusMessage",
    "InvalidTopicError",
    "NotConnectedError",
    "Session",
    "SubAck",
]
