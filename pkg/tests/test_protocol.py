"""Adapter protocol: codecs, session ordering, fault paths, conformance."""
from __future__ import annotations

import io
import json
import sys

import pytest

from graphbench.model import ModelSpec
from graphbench.protocol import (
    ERR_PROTOCOL_VIOLATION,
    ERR_UNKNOWN_TYPE,
    AdapterCrashError,
    AdapterReportedError,
    AdapterSession,
    AdapterTimeoutError,
    BenchOk,
    BenchRequest,
    Bye,
    ErrorResponse,
    Hello,
    InitOk,
    InitRequest,
    ProtocolViolationError,
    ShutdownRequest,
    decode_message,
    encode_message,
    serve_backend,
)
from graphbench.synthetic import DEFAULT_PROFILE, synthetic_samples

from conftest import SYNTHETIC_ARGV

CONV_MODEL = ModelSpec.from_block("conv", 8, 2, input_shape=(3, 8, 8))


def fake_adapter_argv(body: str) -> list[str]:
    """An inline adapter: prints hello then runs ``body`` with stdin available."""
    script = (
        "import sys, json\n"
        "print(json.dumps({'type': 'hello', 'protocol': 1}), flush=True)\n" + body
    )
    return [sys.executable, "-u", "-c", script]


# -- message codec ------------------------------------------------------------


@pytest.mark.parametrize(
    "message",
    [
        Hello(),
        InitRequest(model=CONV_MODEL, compiler_id="turbo", batch_size=4, flags={"opt": "3"}),
        InitRequest(model=ModelSpec.from_catalog("ResNet-50"), compiler_id="identity", batch_size=1),
        BenchRequest(repetitions=5, warmup=2, samples_per_repetition=3),
        ShutdownRequest(),
        InitOk(compile_time_s=3.25),
        BenchOk(throughput_samples=(1.5, 2.5, 98.125)),
        ErrorResponse(code="init_failed", message="boom"),
        Bye(),
    ],
)
def test_message_round_trip(message) -> None:
    line = encode_message(message)
    assert "\n" not in line
    assert decode_message(line) == message


def test_decode_rejects_garbage() -> None:
    for line in ("not json", "[1,2]", '{"no_type": 1}', '{"type": "warp"}', '{"type": "init"}'):
        with pytest.raises(ProtocolViolationError):
            decode_message(line)


def test_bench_request_defaults() -> None:
    msg = decode_message('{"type":"bench","repetitions":4}')
    assert msg == BenchRequest(repetitions=4, warmup=0, samples_per_repetition=1)


# -- serve_backend (no subprocess) --------------------------------------------


class _EchoBackend:
    def on_init(self, request: InitRequest):
        return InitOk(compile_time_s=1.0)

    def on_bench(self, request: BenchRequest):
        return BenchOk(throughput_samples=tuple(float(i) for i in range(request.repetitions)))


def drive(lines: list[str]) -> list[dict]:
    stdin = io.StringIO("".join(line + "\n" for line in lines))
    stdout = io.StringIO()
    code = serve_backend(_EchoBackend(), stdin=stdin, stdout=stdout)
    assert code == 0
    return [json.loads(line) for line in stdout.getvalue().splitlines()]


def test_serve_backend_happy_path() -> None:
    replies = drive(
        [
            encode_message(InitRequest(model=CONV_MODEL, compiler_id="c", batch_size=1)),
            encode_message(BenchRequest(repetitions=2)),
            encode_message(ShutdownRequest()),
        ]
    )
    assert [r["type"] for r in replies] == ["hello", "init_ok", "bench_ok", "bye"]
    assert replies[0]["protocol"] == 1


def test_serve_backend_enforces_ordering() -> None:
    replies = drive(
        [
            encode_message(BenchRequest(repetitions=1)),
            encode_message(InitRequest(model=CONV_MODEL, compiler_id="c", batch_size=1)),
            encode_message(InitRequest(model=CONV_MODEL, compiler_id="c", batch_size=2)),
            '{"type": "frobnicate"}',
            encode_message(ShutdownRequest()),
        ]
    )
    assert [r["type"] for r in replies] == ["hello", "error", "init_ok", "error", "error", "bye"]
    assert replies[1]["code"] == ERR_PROTOCOL_VIOLATION
    assert replies[3]["code"] == ERR_PROTOCOL_VIOLATION
    assert replies[4]["code"] == ERR_UNKNOWN_TYPE


def test_serve_backend_eof_is_orderly() -> None:
    stdout = io.StringIO()
    assert serve_backend(_EchoBackend(), stdin=io.StringIO(""), stdout=stdout) == 0
    assert json.loads(stdout.getvalue())["type"] == "hello"


# -- AdapterSession against the real synthetic subprocess ---------------------


def test_session_happy_path_matches_pure_function() -> None:
    with AdapterSession(SYNTHETIC_ARGV) as session:
        init_ok = session.init(
            InitRequest(model=CONV_MODEL, compiler_id="turbo", batch_size=4, flags={})
        )
        bench_ok = session.bench(BenchRequest(repetitions=3))
        session.shutdown()
    assert init_ok.compile_time_s == 3.5
    expected = synthetic_samples(DEFAULT_PROFILE, "turbo", 4, 3, CONV_MODEL)
    assert list(bench_ok.throughput_samples) == expected


def test_session_client_side_ordering() -> None:
    with AdapterSession(SYNTHETIC_ARGV) as session:
        with pytest.raises(ProtocolViolationError):
            session.bench(BenchRequest(repetitions=1))
        session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=1))
        with pytest.raises(ProtocolViolationError):
            session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=2))
        session.shutdown()
        with pytest.raises(ProtocolViolationError):
            session.bench(BenchRequest(repetitions=1))


def test_session_unknown_compiler_reported() -> None:
    with AdapterSession(SYNTHETIC_ARGV) as session:
        with pytest.raises(AdapterReportedError) as excinfo:
            session.init(InitRequest(model=CONV_MODEL, compiler_id="warp9", batch_size=1))
        assert excinfo.value.code == "unknown_compiler"


def test_session_fail_init_flag() -> None:
    with AdapterSession(SYNTHETIC_ARGV + ["--fail-init"]) as session:
        with pytest.raises(AdapterReportedError) as excinfo:
            session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=1))
        assert excinfo.value.code == "init_failed"


def test_session_crash_mid_run() -> None:
    # Adapter hard-exits after its second reply (init_ok + first bench_ok).
    with AdapterSession(SYNTHETIC_ARGV + ["--crash-after", "2"]) as session:
        session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=1))
        session.bench(BenchRequest(repetitions=1))
        with pytest.raises(AdapterCrashError):
            session.bench(BenchRequest(repetitions=1))


def test_session_spawn_failure() -> None:
    with pytest.raises(AdapterCrashError):
        AdapterSession(["/nonexistent/adapter-binary"])


def test_session_exit_before_hello() -> None:
    with pytest.raises(AdapterCrashError):
        AdapterSession([sys.executable, "-c", "import sys; sys.exit(3)"])


def test_session_bench_timeout() -> None:
    with AdapterSession(SYNTHETIC_ARGV + ["--sleep-bench", "5"], bench_timeout_s=0.3) as session:
        session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=1))
        with pytest.raises(AdapterTimeoutError):
            session.bench(BenchRequest(repetitions=1))


def test_session_init_timeout() -> None:
    with AdapterSession(SYNTHETIC_ARGV + ["--sleep-init", "5"], init_timeout_s=0.3) as session:
        with pytest.raises(AdapterTimeoutError):
            session.init(InitRequest(model=CONV_MODEL, compiler_id="identity", batch_size=1))


def test_session_rejects_wrong_protocol_version() -> None:
    argv = [
        sys.executable,
        "-u",
        "-c",
        "import json; print(json.dumps({'type': 'hello', 'protocol': 99}), flush=True)",
    ]
    with pytest.raises(ProtocolViolationError):
        AdapterSession(argv)


def test_session_rejects_wrong_sample_count() -> None:
    body = (
        "for line in sys.stdin:\n"
        "    msg = json.loads(line)\n"
        "    if msg['type'] == 'init':\n"
        "        print(json.dumps({'type': 'init_ok', 'compile_time_s': 0.0}), flush=True)\n"
        "    elif msg['type'] == 'bench':\n"
        "        print(json.dumps({'type': 'bench_ok', 'throughput_samples': [1.0]}), flush=True)\n"
    )
    with AdapterSession(fake_adapter_argv(body)) as session:
        session.init(InitRequest(model=CONV_MODEL, compiler_id="c", batch_size=1))
        with pytest.raises(ProtocolViolationError):
            session.bench(BenchRequest(repetitions=3))
