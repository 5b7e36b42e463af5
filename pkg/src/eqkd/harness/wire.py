"""Line protocol for the networked mode.

Every frame is::

    4 bytes  big-endian length of everything after these 4 bytes
    1 byte   kind tag
    payload

Protocol events carry a canonical-JSON payload; the sender's identity is the
link itself, so no actor byte travels. The handshake frame (tag 0x00) holds a
single version byte followed by the 32-byte configuration digest: endpoints
refuse to talk unless both sides were launched from an identical session
configuration.
"""

from __future__ import annotations

import json
import socket
import struct

from ..transcript import EventKind

WIRE_VERSION = 0x01
TAG_HELLO = 0x00
MAX_FRAME = 1 << 26

_KIND_TAGS = {
    EventKind.QUBITS_SENT: 0x01,
    EventKind.BASES_ANNOUNCED_BOB: 0x02,
    EventKind.BASES_ANNOUNCED_ALICE: 0x03,
    EventKind.TEST_INDICES: 0x04,
    EventKind.TEST_DISCLOSURE: 0x05,
    EventKind.ESTIMATE: 0x06,
    EventKind.DECISION: 0x07,
    EventKind.PERMUTATION_SEED: 0x08,
    EventKind.CODEWORD_ANNOUNCEMENT: 0x09,
    EventKind.KEY_DIGEST: 0x0A,
}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


class FrameError(Exception):
    """The stream ended early or a frame was malformed."""


class UnknownTag(FrameError):
    def __init__(self, tag: int):
        super().__init__(f"unknown frame tag 0x{tag:02X}")
        self.tag = tag


class HandshakeError(Exception):
    """Version or configuration mismatch during the hello exchange."""


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise FrameError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, tag: int, payload: bytes) -> None:
    if not (0 <= tag <= 0xFF):
        raise ValueError("tag must fit one byte")
    body = bytes([tag]) + payload
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame of {len(body)} bytes exceeds the cap")
    sock.sendall(struct.pack(">I", len(body)) + body)


def recv_frame(sock: socket.socket) -> tuple[int, bytes]:
    header = sock.recv(4)
    if not header:
        raise EOFError("connection closed")
    if len(header) < 4:
        header += _recv_exact(sock, 4 - len(header))
    (length,) = struct.unpack(">I", header)
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"frame length {length} out of range")
    body = _recv_exact(sock, length)
    return body[0], body[1:]


def send_event(sock: socket.socket, kind: EventKind, payload: dict) -> None:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    send_frame(sock, _KIND_TAGS[kind], blob)


def recv_event(sock: socket.socket) -> tuple[EventKind, dict]:
    tag, blob = recv_frame(sock)
    if tag == TAG_HELLO:
        raise FrameError("hello frame arrived after the handshake")
    kind = _TAG_KINDS.get(tag)
    if kind is None:
        raise UnknownTag(tag)
    try:
        payload = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"bad event payload: {exc}") from exc
    return kind, payload


def send_hello(sock: socket.socket, config_digest_hex: str) -> None:
    digest = bytes.fromhex(config_digest_hex)
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes of hex")
    send_frame(sock, TAG_HELLO, bytes([WIRE_VERSION]) + digest)


def recv_hello(sock: socket.socket) -> str:
    tag, payload = recv_frame(sock)
    if tag != TAG_HELLO:
        raise HandshakeError("expected a hello frame first")
    if len(payload) != 33:
        raise HandshakeError("hello frame has the wrong size")
    if payload[0] != WIRE_VERSION:
        raise HandshakeError(
            f"peer speaks wire version {payload[0]}, this end speaks {WIRE_VERSION}"
        )
    return payload[1:].hex()


def exchange_hello(sock: socket.socket, config_digest_hex: str, initiate: bool) -> None:
    """Run the hello exchange and verify the peer's configuration digest."""
    if initiate:
        send_hello(sock, config_digest_hex)
        theirs = recv_hello(sock)
    else:
        theirs = recv_hello(sock)
        send_hello(sock, config_digest_hex)
    if theirs != config_digest_hex:
        raise HandshakeError("peer was launched with a different configuration")
