"""Coordinator/agent wire format: length-prefixed JSON frames over TCP.

Each frame is a 4-byte big-endian payload length followed by that many bytes
of UTF-8 JSON. Every message is an object carrying:

* ``type``: one of hello, deploy_plan, progress, results_upload, teardown,
  ack, nack;
* ``plan_id``: the plan the session is about;
* ``seq``: a per-sender sequence number, strictly increasing within one
  session, so replayed or reordered frames are detected at the receiver.

``ack``/``nack`` reference the peer sequence number they answer in ``re``.
The session journal records one digest line per message (direction, type,
seq, payload hash) so orchestration properties can be audited after a run.
"""
from __future__ import annotations

import hashlib
import json
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Any, Mapping

from .model import Measurement

WIRE_PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024

MSG_HELLO = "hello"
MSG_DEPLOY_PLAN = "deploy_plan"
MSG_PROGRESS = "progress"
MSG_RESULTS_UPLOAD = "results_upload"
MSG_TEARDOWN = "teardown"
MSG_ACK = "ack"
MSG_NACK = "nack"

MESSAGE_TYPES = frozenset(
    {MSG_HELLO, MSG_DEPLOY_PLAN, MSG_PROGRESS, MSG_RESULTS_UPLOAD, MSG_TEARDOWN, MSG_ACK, MSG_NACK}
)


class WireError(RuntimeError):
    """Malformed frame or message."""


class SequenceError(WireError):
    """A peer's sequence number failed to strictly increase."""


class ConnectionClosed(WireError):
    """The peer closed the connection mid-session."""


def encode_frame(message: Mapping[str, Any]) -> bytes:
    payload = json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise WireError(f"frame of {len(payload)} bytes exceeds limit")
    return struct.pack(">I", len(payload)) + payload


def validate_message(obj: Any) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise WireError(f"message must be an object, got {type(obj).__name__}")
    mtype = obj.get("type")
    if mtype not in MESSAGE_TYPES:
        raise WireError(f"unknown message type {mtype!r}")
    if not isinstance(obj.get("plan_id"), str):
        raise WireError("message missing string plan_id")
    seq = obj.get("seq")
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 0:
        raise WireError("message missing non-negative integer seq")
    return obj


def decode_frame(payload: bytes) -> dict[str, Any]:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"frame payload is not valid JSON: {exc}") from exc
    return validate_message(obj)


class MessageSocket:
    """A framed-message view of one TCP socket, with sequence bookkeeping.

    Outgoing messages are numbered automatically; incoming sequence numbers
    are checked for strict increase. Writes are serialized with a lock so a
    progress stream and a response never interleave mid-frame.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._next_seq = 0
        self._last_peer_seq: int | None = None
        self._recv_buf = b""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def settimeout(self, timeout: float | None) -> None:
        self._sock.settimeout(timeout)

    def send(self, mtype: str, plan_id: str, **payload: Any) -> int:
        """Send one message; returns the sequence number it carried."""
        with self._send_lock:
            seq = self._next_seq
            self._next_seq += 1
            message = {"type": mtype, "plan_id": plan_id, "seq": seq, **payload}
            validate_message(message)
            self._sock.sendall(encode_frame(message))
            return seq

    def _recv_exact(self, n: int) -> bytes:
        while len(self._recv_buf) < n:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("no frame within socket timeout") from None
            if not chunk:
                raise ConnectionClosed("peer closed the connection")
            self._recv_buf += chunk
        data, self._recv_buf = self._recv_buf[:n], self._recv_buf[n:]
        return data

    def recv(self) -> dict[str, Any]:
        """Receive one message; enforces strictly increasing peer seq."""
        header = self._recv_exact(4)
        (length,) = struct.unpack(">I", header)
        if length > MAX_FRAME_BYTES:
            raise WireError(f"peer announced oversized frame of {length} bytes")
        message = decode_frame(self._recv_exact(length))
        seq = message["seq"]
        if self._last_peer_seq is not None and seq <= self._last_peer_seq:
            raise SequenceError(f"peer seq {seq} does not increase over {self._last_peer_seq}")
        self._last_peer_seq = seq
        return message


def measurement_to_document(m: Measurement) -> dict[str, Any]:
    return {
        "task_id": m.task_id,
        "throughput_samples": list(m.throughput_samples),
        "cpu_samples": list(m.cpu_samples),
        "compile_time_s": m.compile_time_s,
        "wall_start": m.wall_start,
        "wall_end": m.wall_end,
    }


def measurement_from_document(doc: Mapping[str, Any]) -> Measurement:
    try:
        return Measurement(
            task_id=str(doc["task_id"]),
            throughput_samples=tuple(float(s) for s in doc["throughput_samples"]),
            cpu_samples=tuple(float(s) for s in doc["cpu_samples"]),
            compile_time_s=float(doc["compile_time_s"]),
            wall_start=float(doc["wall_start"]),
            wall_end=float(doc["wall_end"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed measurement document: {exc}") from exc


@dataclass(frozen=True)
class JournalEntry:
    device_id: str
    direction: str  # "send" | "recv"
    type: str
    seq: int
    plan_id: str
    payload_sha256: str


class Journal:
    """Append-only JSON-lines log of every coordinator message, per device."""

    def __init__(self, path: str | None):
        self._path = path
        self._lock = threading.Lock()
        if path is not None:
            # Truncate: one journal per run.
            open(path, "w", encoding="utf-8").close()

    def record(self, device_id: str, direction: str, message: Mapping[str, Any]) -> None:
        if self._path is None:
            return
        digest = hashlib.sha256(
            json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8")
        ).hexdigest()
        entry = {
            "device_id": device_id,
            "direction": direction,
            "type": message["type"],
            "seq": message["seq"],
            "plan_id": message["plan_id"],
            "payload_sha256": digest,
        }
        line = json.dumps(entry, separators=(",", ":"), sort_keys=True)
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def read_journal(path: str) -> list[JournalEntry]:
    entries: list[JournalEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entries.append(
                JournalEntry(
                    device_id=obj["device_id"],
                    direction=obj["direction"],
                    type=obj["type"],
                    seq=obj["seq"],
                    plan_id=obj["plan_id"],
                    payload_sha256=obj["payload_sha256"],
                )
            )
    return entries
