"""Serve a :class:`Broker` over the frame protocol (TCP or an in-process channel)."""
from __future__ import annotations

import asyncio
import binascii
import logging
import threading
from typing import Callable

from . import wire
from .broker import AuthError, Broker, BusMessage, NotConnectedError, Session
from .topics import InvalidTopicError

log = logging.getLogger(__name__)


class ServerConnection:
    """Protocol state for one remote client, independent of the transport."""

    def __init__(self, broker: Broker, send: Callable[[dict], None], close: Callable[[], None]):
        self.broker = broker
        self._send = send
        self._close = close
        self.session: Session | None = None

    def _deliver(self, msg: BusMessage) -> None:
        self._send({
            "kind": "MSG",
            "topic": msg.topic,
            "payload": wire.b64(msg.payload),
            "msg_id": msg.msg_id,
            "publisher_id": msg.publisher_id,
            "ts": msg.ts,
        })

    def _on_session_close(self, reason: str) -> None:
        self._send({"kind": "CLOSE", "reason": reason})
        self._close()

    def handle(self, frame: dict) -> None:
        kind = frame["kind"]
        if kind == "CONNECT":
            try:
                s = self.broker.connect(str(frame.get("client_id")), str(frame.get("token")))
            except AuthError:
                self._send({"kind": "CONNACK", "code": wire.AUTH_FAILED})
                self._close()
                return
            self.session = s
            s.on_close = self._on_session_close
            self._send({"kind": "CONNACK", "code": wire.OK})
            s.set_handler(self._deliver, auto_ack=False)
            return
        if kind == "PING":
            self._send({"kind": "PONG"})
            return
        if self.session is None or not self.session.connected:
            if kind != "CLOSE":
                self.broker._audit("unauthenticated-frame", str(frame.get("client_id")), kind=kind)
                self._send({"kind": "CLOSE", "reason": "not-connected", "code": wire.NOT_CONNECTED})
            self._close()
            return
        s = self.session
        try:
            if kind == "PUB":
                ack = s.publish(frame["topic"], wire.unb64(frame.get("payload", "")), frame.get("msg_id"))
                self._send({"kind": "PUBACK", "msg_id": ack.msg_id, "code": wire.OK,
                            "deliveries": ack.deliveries, "duplicate": ack.duplicate})
            elif kind == "SUB":
                s.subscribe(frame["pattern"])
                self._send({"kind": "SUBACK", "pattern": frame["pattern"], "code": wire.OK})
            elif kind == "PUBACK":
                # client acknowledging a MSG
                s.ack(str(frame["msg_id"]))
            elif kind == "CLOSE":
                s.on_close = None
                s.close()
                self._close()
            else:
                self._send({"kind": "CLOSE", "reason": f"unexpected {kind}", "code": wire.PROTOCOL_ERROR})
                self.connection_lost()
                self._close()
        except InvalidTopicError as exc:
            ack_kind = "SUBACK" if kind == "SUB" else "PUBACK"
            self._send({"kind": ack_kind, "msg_id": frame.get("msg_id"), "pattern": frame.get("pattern"),
                        "code": wire.INVALID_TOPIC, "error": str(exc)})
        except (KeyError, binascii.Error, ValueError) as exc:
            self._send({"kind": "CLOSE", "reason": f"bad {kind} frame: {exc}", "code": wire.PROTOCOL_ERROR})
            self.connection_lost()
            self._close()
        except NotConnectedError:
            self._send({"kind": "CLOSE", "reason": "not-connected", "code": wire.NOT_CONNECTED})
            self._close()

    def connection_lost(self) -> None:
        """Transport dropped without CLOSE: in-flight messages stay queued for redelivery."""
        s = self.session
        if s is not None and s.connected:
            s.on_close = None
            self.broker.disconnect(s, "connection-lost")


class BrokerServer:
    """asyncio TCP front end. All broker calls happen on the event-loop thread."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self.host = host
        self.port = port
        self._server: asyncio.AbstractServer | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._started = threading.Event()

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        closed = False

        def send(obj: dict) -> None:
            if not closed:
                writer.write(wire.encode_frame(obj))

        def close() -> None:
            nonlocal closed
            if not closed:
                closed = True
                writer.close()

        conn = ServerConnection(self.broker, send, close)
        decoder = wire.FrameDecoder()
        try:
            while not closed:
                data = await reader.read(65536)
                if not data:
                    break
                try:
                    frames = decoder.feed(data)
                except wire.FrameError as exc:
                    send({"kind": "CLOSE", "reason": str(exc), "code": wire.PROTOCOL_ERROR})
                    break
                for f in frames:
                    conn.handle(f)
                    if closed:
                        break
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            conn.connection_lost()
            close()

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    # background-thread helpers, used by tests and embedding code
    def start_in_thread(self) -> "BrokerServer":
        def runner() -> None:
            self._loop = asyncio.new_event_loop()
            self._loop.run_until_complete(self.start())
            self._started.set()
            self._loop.run_forever()

        self._thread = threading.Thread(target=runner, name="broker-server", daemon=True)
        self._thread.start()
        self._started.wait(5)
        return self

    def stop(self) -> None:
        if self._loop is None:
            return

        async def _shutdown() -> None:
            self._server.close()
            await self._server.wait_closed()

        fut = asyncio.run_coroutine_threadsafe(_shutdown(), self._loop)
        try:
            fut.result(5)
        except Exception:  # noqa: BLE001
            log.debug("broker shutdown raised", exc_info=True)
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(5)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1"), int(port)
