"""Length-prefixed JSON framing.

A frame is a 4-byte big-endian length N followed by N bytes of UTF-8 JSON.
Every frame object carries ``kind``; payload bytes travel base64-encoded.
"""
from __future__ import annotations

import base64
import json
import struct

MAX_FRAME = 1 << 20
KINDS = frozenset(
    {"CONNECT", "CONNACK", "PUB", "PUBACK", "SUB", "SUBACK", "MSG", "PING", "PONG", "CLOSE"}
)

# result codes carried in CONNACK / PUBACK / SUBACK
OK = 0
AUTH_FAILED = 1
INVALID_TOPIC = 2
NOT_CONNECTED = 3
PROTOCOL_ERROR = 4

_HEADER = struct.Struct(">I")


class FrameError(ValueError):
    pass


def encode_frame(obj: dict) -> bytes:
    if obj.get("kind") not in KINDS:
        raise FrameError(f"unknown frame kind {obj.get('kind')!r}")
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"malformed frame body: {exc}") from None
    if not isinstance(obj, dict) or obj.get("kind") not in KINDS:
        raise FrameError("frame must be an object with a known 'kind'")
    return obj


class FrameDecoder:
    """Incremental decoder: feed bytes, get complete frames back."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf.extend(data)
        frames = []
        while len(self._buf) >= 4:
            (n,) = _HEADER.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise FrameError(f"declared frame length {n} exceeds {MAX_FRAME}")
            if len(self._buf) < 4 + n:
                break
            body = bytes(self._buf[4:4 + n])
            del self._buf[:4 + n]
            frames.append(decode_body(body))
        return frames


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)
