"""Framed wire protocol: 4-byte big-endian length, then a canonical payload.

The same envelope rides the in-memory simulation bus and the socket
transport, so protocol behavior cannot diverge between the two. Kinds
REGISTER, PROPOSAL_RELAY, PROMISE, SECRET, RECEIPT, CLOSE_REQUEST and ERROR
carry the payment protocol itself; the remaining kinds are deployment
plumbing (responses, ledger access for wallets, and hub administration).
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field

from . import codec
from .errors import EncodingError

K_REGISTER = "REGISTER"
K_REGISTER_OK = "REGISTER_OK"
K_PROPOSAL_RELAY = "PROPOSAL_RELAY"
K_PROMISE = "PROMISE"
K_SECRET = "SECRET"
K_RECEIPT = "RECEIPT"
K_CLOSE_REQUEST = "CLOSE_REQUEST"
K_CLOSE_OK = "CLOSE_OK"
K_ERROR = "ERROR"
K_OK = "OK"
K_LEDGER_OP = "LEDGER_OP"
K_LEDGER_RESULT = "LEDGER_RESULT"
K_ADMIN = "ADMIN"
K_ADMIN_RESULT = "ADMIN_RESULT"

KINDS = {
    K_REGISTER, K_REGISTER_OK, K_PROPOSAL_RELAY, K_PROMISE, K_SECRET,
    K_RECEIPT, K_CLOSE_REQUEST, K_CLOSE_OK, K_ERROR, K_OK,
    K_LEDGER_OP, K_LEDGER_RESULT, K_ADMIN, K_ADMIN_RESULT,
}

MAX_FRAME = 1 << 24  # 16 MiB guardrail


@dataclass(frozen=True)
class WireMessage:
    kind: str
    body: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        if self.kind not in KINDS:
            raise EncodingError(f"unknown message kind {self.kind}")
        return codec.canonical_encode(codec.TAG_WIRE, {"kind": self.kind, "body": self.body})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WireMessage":
        tag, fields = codec.canonical_decode(blob)
        if tag != codec.TAG_WIRE:
            raise EncodingError(f"expected wire tag, got {tag!r}")
        kind = fields.get("kind")
        if kind not in KINDS:
            raise EncodingError(f"unknown message kind {kind!r}")
        return cls(kind, fields.get("body") or {})


def error_message(code: str, detail: str = "", **extra) -> WireMessage:
    body = {"code": code, "detail": detail}
    body.update(extra)
    return WireMessage(K_ERROR, body)


def encode_frame(msg: WireMessage) -> bytes:
    payload = msg.to_bytes()
    if len(payload) > MAX_FRAME:
        raise EncodingError(f"frame too large: {len(payload)}")
    return struct.pack(">I", len(payload)) + payload


def decode_frames(buffer: bytes) -> tuple[list[WireMessage], bytes]:
    """Pull every complete frame from ``buffer``; returns (messages, rest)."""
    messages = []
    while len(buffer) >= 4:
        (length,) = struct.unpack(">I", buffer[:4])
        if length > MAX_FRAME:
            raise EncodingError(f"frame length {length} exceeds limit")
        if len(buffer) < 4 + length:
            break
        messages.append(WireMessage.from_bytes(buffer[4:4 + length]))
        buffer = buffer[4 + length:]
    return messages, buffer


class FrameStream:
    """Blocking frame reader/writer over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buffer = b""
        self._pending: list[WireMessage] = []

    def send(self, msg: WireMessage) -> None:
        self.sock.sendall(encode_frame(msg))

    def recv(self, timeout: float | None = None) -> WireMessage | None:
        """Next frame, or None once the peer closes the stream."""
        if self._pending:
            return self._pending.pop(0)
        self.sock.settimeout(timeout)
        while True:
            messages, self._buffer = decode_frames(self._buffer)
            if messages:
                self._pending = messages[1:]
                return messages[0]
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self._buffer += chunk

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
