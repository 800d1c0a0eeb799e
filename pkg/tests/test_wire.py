"""Framing, message validation, sequence enforcement, and the journal."""
from __future__ import annotations

import socket
import struct

import pytest

from graphbench.model import Measurement
from graphbench.wire import (
    MAX_FRAME_BYTES,
    ConnectionClosed,
    Journal,
    MessageSocket,
    SequenceError,
    WireError,
    decode_frame,
    encode_frame,
    measurement_from_document,
    measurement_to_document,
    read_journal,
    validate_message,
)


def test_frame_round_trip() -> None:
    message = {"type": "hello", "plan_id": "p", "seq": 0, "protocol": 1}
    frame = encode_frame(message)
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert decode_frame(frame[4:]) == message


def test_frame_rejects_oversized() -> None:
    huge = {"type": "hello", "plan_id": "p", "seq": 0, "blob": "x" * (MAX_FRAME_BYTES + 1)}
    with pytest.raises(WireError):
        encode_frame(huge)


@pytest.mark.parametrize(
    "obj",
    [
        "not a dict",
        {"plan_id": "p", "seq": 0},
        {"type": "warp", "plan_id": "p", "seq": 0},
        {"type": "ack", "seq": 0},
        {"type": "ack", "plan_id": "p"},
        {"type": "ack", "plan_id": "p", "seq": -1},
        {"type": "ack", "plan_id": "p", "seq": True},
        {"type": "ack", "plan_id": 7, "seq": 0},
    ],
)
def test_validate_message_rejections(obj) -> None:
    with pytest.raises(WireError):
        validate_message(obj)


def socket_pair() -> tuple[MessageSocket, MessageSocket]:
    a, b = socket.socketpair()
    return MessageSocket(a), MessageSocket(b)


def test_message_socket_round_trip_and_auto_seq() -> None:
    left, right = socket_pair()
    try:
        assert left.send("hello", "p", protocol=1) == 0
        assert left.send("progress", "p", completed=1, total=4) == 1
        first = right.recv()
        second = right.recv()
        assert first["type"] == "hello" and first["seq"] == 0
        assert second["type"] == "progress" and second["seq"] == 1
    finally:
        left.close()
        right.close()


def test_message_socket_rejects_stale_seq() -> None:
    left, right = socket_pair()
    try:
        left._sock.sendall(encode_frame({"type": "ack", "plan_id": "p", "seq": 5}))
        left._sock.sendall(encode_frame({"type": "ack", "plan_id": "p", "seq": 5}))
        right.recv()
        with pytest.raises(SequenceError):
            right.recv()
    finally:
        left.close()
        right.close()


def test_message_socket_connection_closed() -> None:
    left, right = socket_pair()
    left.close()
    try:
        with pytest.raises(ConnectionClosed):
            right.recv()
    finally:
        right.close()


def test_message_socket_timeout() -> None:
    left, right = socket_pair()
    try:
        right.settimeout(0.05)
        with pytest.raises(TimeoutError):
            right.recv()
    finally:
        left.close()
        right.close()


def test_measurement_document_round_trip() -> None:
    m = Measurement(
        task_id="d/c/m/b1#00000000",
        throughput_samples=(1.0, 2.5),
        cpu_samples=(10.0,),
        compile_time_s=0.25,
        wall_start=100.0,
        wall_end=101.0,
    )
    assert measurement_from_document(measurement_to_document(m)) == m
    with pytest.raises(WireError):
        measurement_from_document({"task_id": "x"})


def test_journal_records_and_reads(tmp_path) -> None:
    path = tmp_path / "run.journal.jsonl"
    journal = Journal(str(path))
    journal.record("d1", "send", {"type": "hello", "plan_id": "p", "seq": 0})
    journal.record("d1", "recv", {"type": "ack", "plan_id": "p", "seq": 0, "re": 0})
    entries = read_journal(str(path))
    assert [e.type for e in entries] == ["hello", "ack"]
    assert entries[0].direction == "send"
    assert entries[1].direction == "recv"
    assert all(len(e.payload_sha256) == 64 for e in entries)

    # identical payloads digest identically; different ones do not
    journal.record("d1", "send", {"type": "hello", "plan_id": "p", "seq": 0})
    journal.record("d1", "send", {"type": "hello", "plan_id": "p", "seq": 1})
    entries = read_journal(str(path))
    assert entries[2].payload_sha256 == entries[0].payload_sha256
    assert entries[3].payload_sha256 != entries[0].payload_sha256


def test_journal_disabled_is_noop(tmp_path) -> None:
    journal = Journal(None)
    journal.record("d1", "send", {"type": "hello", "plan_id": "p", "seq": 0})  # must not blow up
