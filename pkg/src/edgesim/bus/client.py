"""Blocking clients for the frame protocol over TCP or an in-process channel."""
from __future__ import annotations

import queue
import socket
import time
from collections import deque

from . import wire
from .broker import AuthError, Broker, BusError, BusMessage
from .server import ServerConnection
from .topics import InvalidTopicError


class ConnectionClosed(BusError):
    pass


class _FrameClient:
    """Request/response logic shared by both transports."""

    timeout = 5.0

    def __init__(self) -> None:
        self._inbox: deque[BusMessage] = deque()
        self.closed_reason: str | None = None
        self._next_id = 0

    # transport hooks
    def _send_frame(self, obj: dict) -> None:
        raise NotImplementedError

    def _recv_frame(self, timeout: float) -> dict | None:
        raise NotImplementedError

    def _absorb(self, frame: dict) -> bool:
        """Buffer asynchronous frames; return True if consumed."""
        if frame["kind"] == "MSG":
            self._inbox.append(BusMessage(frame["topic"], wire.unb64(frame["payload"]),
                                          frame.get("publisher_id", ""), frame["msg_id"], frame.get("ts", 0)))
            return True
        if frame["kind"] == "CLOSE":
            self.closed_reason = frame.get("reason", "closed")
            raise ConnectionClosed(self.closed_reason)
        return False

    def _await(self, kind: str, **match) -> dict:
        deadline = time.monotonic() + self.timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise TimeoutError(f"no {kind} within {self.timeout}s")
            frame = self._recv_frame(left)
            if frame is None:
                continue
            if frame["kind"] == "CONNACK" and kind == "CONNACK":
                return frame
            if self._absorb(frame):
                continue
            if frame["kind"] == kind and all(frame.get(k) == v for k, v in match.items()):
                return frame

    def handshake(self, client_id: str, token: str) -> None:
        self.client_id = client_id
        self._send_frame({"kind": "CONNECT", "client_id": client_id, "token": token})
        ack = self._await("CONNACK")
        if ack["code"] != wire.OK:
            raise AuthError(f"authentication failed for {client_id!r}")

    def publish(self, topic: str, payload: bytes | str, msg_id: str | None = None) -> dict:
        if isinstance(payload, str):
            payload = payload.encode()
        if msg_id is None:
            self._next_id += 1
            msg_id = f"{self.client_id}-{self._next_id}"
        self._send_frame({"kind": "PUB", "topic": topic, "payload": wire.b64(payload), "msg_id": msg_id})
        ack = self._await("PUBACK", msg_id=msg_id)
        if ack["code"] == wire.INVALID_TOPIC:
            raise InvalidTopicError(ack.get("error", topic))
        return ack

    def subscribe(self, pattern: str) -> dict:
        self._send_frame({"kind": "SUB", "pattern": pattern})
        ack = self._await("SUBACK", pattern=pattern)
        if ack["code"] == wire.INVALID_TOPIC:
            raise InvalidTopicError(ack.get("error", pattern))
        return ack

    def ping(self) -> None:
        self._send_frame({"kind": "PING"})
        self._await("PONG")

    def receive(self, n: int = 1, timeout: float | None = None) -> list[BusMessage]:
        """Wait until ``n`` messages are buffered (or timeout) and return them."""
        deadline = time.monotonic() + (self.timeout if timeout is None else timeout)
        while len(self._inbox) < n:
            left = deadline - time.monotonic()
            if left <= 0:
                break
            frame = self._recv_frame(left)
            if frame is not None and not self._absorb(frame):
                raise BusError(f"unexpected frame {frame['kind']}")
        out = []
        while self._inbox and len(out) < n:
            out.append(self._inbox.popleft())
        return out

    def ack(self, msg_id: str) -> None:
        self._send_frame({"kind": "PUBACK", "msg_id": msg_id})

    def close(self) -> None:
        try:
            self._send_frame({"kind": "CLOSE"})
        except OSError:
            pass


class TcpClient(_FrameClient):
    def __init__(self, host: str, port: int, client_id: str, token: str, timeout: float = 5.0):
        super().__init__()
        self.timeout = timeout
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._decoder = wire.FrameDecoder()
        self._frames: deque[dict] = deque()
        self.handshake(client_id, token)

    def _send_frame(self, obj: dict) -> None:
        self._sock.sendall(wire.encode_frame(obj))

    def _recv_frame(self, timeout: float) -> dict | None:
        if self._frames:
            return self._frames.popleft()
        self._sock.settimeout(max(timeout, 1e-3))
        try:
            data = self._sock.recv(65536)
        except socket.timeout:
            return None
        if not data:
            raise ConnectionClosed(self.closed_reason or "eof")
        self._frames.extend(self._decoder.feed(data))
        return self._frames.popleft() if self._frames else None

    def drop(self) -> None:
        """Abort the TCP connection without a CLOSE frame."""
        self._sock.close()

    def close(self) -> None:
        super().close()
        self._sock.close()


class ChannelClient(_FrameClient):
    """Same protocol, carried in-process; frames still pass through the codec."""

    def __init__(self, broker: Broker, client_id: str, token: str):
        super().__init__()
        self._to_client: queue.Queue[bytes] = queue.Queue()
        self._decoder = wire.FrameDecoder()
        self._frames: deque[dict] = deque()
        self._server_decoder = wire.FrameDecoder()
        self._open = True
        self._conn = ServerConnection(broker, self._server_send, self._server_close)
        self.handshake(client_id, token)

    def _server_send(self, obj: dict) -> None:
        if self._open:
            self._to_client.put(wire.encode_frame(obj))

    def _server_close(self) -> None:
        self._open = False

    def _send_frame(self, obj: dict) -> None:
        for frame in self._server_decoder.feed(wire.encode_frame(obj)):
            self._conn.handle(frame)

    def _recv_frame(self, timeout: float) -> dict | None:
        while not self._frames:
            try:
                data = self._to_client.get(timeout=max(timeout, 1e-3))
            except queue.Empty:
                return None
            self._frames.extend(self._decoder.feed(data))
        return self._frames.popleft()

    def drop(self) -> None:
        self._open = False
        self._conn.connection_lost()
