"""Adapter wire protocol: newline-delimited JSON over child stdin/stdout.

An adapter is an executable that compiles and measures models for one
compiler backend. The host spawns one adapter process per task and speaks
protocol version 1:

* Every message is one UTF-8 JSON object per line; the ``type`` field
  dispatches.
* On start the adapter emits ``{"type": "hello", "protocol": 1}``.
* The host then drives ``init`` -> ``bench``* -> ``shutdown``; the adapter
  answers each request with exactly one of ``init_ok`` / ``bench_ok`` /
  ``error`` and answers ``shutdown`` with ``bye`` before exiting 0.
* The batch size is fixed at init; a new batch size means a new process.
  Re-init, bench-before-init, and unknown types get an ``error`` reply with
  code ``protocol_violation`` / ``unknown_type``.

``AdapterSession`` is the host side: it enforces ordering locally, applies
per-phase timeouts (compile jobs can legitimately run for hours, so the init
timeout defaults to 24h against runaway jobs while bench defaults to 1h),
and maps child misbehavior onto typed exceptions.
"""
from __future__ import annotations

import json
import os
import select
import subprocess
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .config import model_from_document, model_to_document
from .model import DEFAULT_BENCH_TIMEOUT_S, DEFAULT_INIT_TIMEOUT_S, ModelSpec

PROTOCOL_VERSION = 1

# Error codes adapters use in `error` replies.
ERR_PROTOCOL_VIOLATION = "protocol_violation"
ERR_UNKNOWN_TYPE = "unknown_type"
ERR_UNKNOWN_COMPILER = "unknown_compiler"
ERR_INIT_FAILED = "init_failed"
ERR_BENCH_FAILED = "bench_failed"


class ProtocolViolationError(RuntimeError):
    """A message arrived (or was about to be sent) out of protocol order."""


class AdapterCrashError(RuntimeError):
    """The adapter process exited or closed its pipe before replying."""


class AdapterTimeoutError(RuntimeError):
    """The adapter failed to reply within the phase timeout."""


class AdapterReportedError(RuntimeError):
    """The adapter answered a request with an ``error`` message."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


@dataclass(frozen=True)
class Hello:
    protocol: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class InitRequest:
    """Load the model for one compiler at one fixed batch size."""

    model: ModelSpec
    compiler_id: str
    batch_size: int
    flags: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchRequest:
    """Measure throughput: ``warmup`` untimed passes, then ``repetitions``
    timed ones, each covering ``samples_per_repetition`` batch inferences."""

    repetitions: int
    warmup: int = 0
    samples_per_repetition: int = 1


@dataclass(frozen=True)
class ShutdownRequest:
    pass


@dataclass(frozen=True)
class InitOk:
    compile_time_s: float


@dataclass(frozen=True)
class BenchOk:
    throughput_samples: tuple[float, ...]


@dataclass(frozen=True)
class ErrorResponse:
    code: str
    message: str


@dataclass(frozen=True)
class Bye:
    pass


Request = InitRequest | BenchRequest | ShutdownRequest
Response = InitOk | BenchOk | ErrorResponse | Bye


def encode_message(msg: Hello | Request | Response) -> str:
    """Render one protocol message as its JSON line (no trailing newline)."""
    obj: dict[str, Any]
    if isinstance(msg, Hello):
        obj = {"type": "hello", "protocol": msg.protocol}
    elif isinstance(msg, InitRequest):
        obj = {
            "type": "init",
            "model": model_to_document(msg.model),
            "compiler_id": msg.compiler_id,
            "batch_size": msg.batch_size,
            "flags": dict(msg.flags),
        }
    elif isinstance(msg, BenchRequest):
        obj = {
            "type": "bench",
            "repetitions": msg.repetitions,
            "warmup": msg.warmup,
            "samples_per_repetition": msg.samples_per_repetition,
        }
    elif isinstance(msg, ShutdownRequest):
        obj = {"type": "shutdown"}
    elif isinstance(msg, InitOk):
        obj = {"type": "init_ok", "compile_time_s": msg.compile_time_s}
    elif isinstance(msg, BenchOk):
        obj = {"type": "bench_ok", "throughput_samples": list(msg.throughput_samples)}
    elif isinstance(msg, ErrorResponse):
        obj = {"type": "error", "code": msg.code, "message": msg.message}
    elif isinstance(msg, Bye):
        obj = {"type": "bye"}
    else:
        raise TypeError(f"not a protocol message: {msg!r}")
    return json.dumps(obj, separators=(",", ":"))


def decode_message(line: str) -> Hello | Request | Response:
    """Parse one JSON line into its message; raises ProtocolViolationError."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolationError(f"not valid JSON: {line!r}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolViolationError(f"message must be an object with a 'type': {line!r}")
    mtype = obj["type"]
    try:
        if mtype == "hello":
            return Hello(protocol=int(obj["protocol"]))
        if mtype == "init":
            return InitRequest(
                model=model_from_document(obj["model"]),
                compiler_id=str(obj["compiler_id"]),
                batch_size=int(obj["batch_size"]),
                flags={str(k): str(v) for k, v in obj.get("flags", {}).items()},
            )
        if mtype == "bench":
            return BenchRequest(
                repetitions=int(obj["repetitions"]),
                warmup=int(obj.get("warmup", 0)),
                samples_per_repetition=int(obj.get("samples_per_repetition", 1)),
            )
        if mtype == "shutdown":
            return ShutdownRequest()
        if mtype == "init_ok":
            return InitOk(compile_time_s=float(obj["compile_time_s"]))
        if mtype == "bench_ok":
            return BenchOk(throughput_samples=tuple(float(s) for s in obj["throughput_samples"]))
        if mtype == "error":
            return ErrorResponse(code=str(obj["code"]), message=str(obj["message"]))
        if mtype == "bye":
            return Bye()
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolationError(f"malformed {mtype!r} message: {line!r}") from exc
    raise ProtocolViolationError(f"unknown message type {mtype!r}")


class _LineReader:
    """Reads newline-terminated lines from a pipe fd with a deadline."""

    def __init__(self, fd: int):
        self._fd = fd
        self._buf = b""
        self._eof = False

    def readline(self, timeout: float) -> bytes | None:
        """One line without its newline, or None at EOF. Raises TimeoutError."""
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1 :]
                return line
            if self._eof:
                if self._buf:
                    line, self._buf = self._buf, b""
                    return line
                return None
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no line within timeout")
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                raise TimeoutError("no line within timeout")
            chunk = os.read(self._fd, 65536)
            if not chunk:
                self._eof = True
            else:
                self._buf += chunk


class AdapterSession:
    """Host side of one adapter process: spawn, handshake, drive, reap.

    Usable as a context manager; ``close()`` kills a still-running child.
    """

    def __init__(
        self,
        argv: Sequence[str],
        *,
        init_timeout_s: float = DEFAULT_INIT_TIMEOUT_S,
        bench_timeout_s: float = DEFAULT_BENCH_TIMEOUT_S,
        hello_timeout_s: float = 30.0,
    ):
        self.argv = list(argv)
        self.init_timeout_s = init_timeout_s
        self.bench_timeout_s = bench_timeout_s
        self._initialized = False
        self._shut_down = False
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                bufsize=0,
            )
        except OSError as exc:
            raise AdapterCrashError(f"failed to spawn adapter {self.argv!r}: {exc}") from exc
        assert self._proc.stdout is not None
        self._reader = _LineReader(self._proc.stdout.fileno())
        hello = self._read_message(hello_timeout_s, phase="handshake")
        if not isinstance(hello, Hello):
            self.close()
            raise ProtocolViolationError(f"adapter did not open with hello: {hello!r}")
        if hello.protocol != PROTOCOL_VERSION:
            self.close()
            raise ProtocolViolationError(
                f"adapter speaks protocol {hello.protocol}, host speaks {PROTOCOL_VERSION}"
            )

    def __enter__(self) -> AdapterSession:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _send(self, msg: Request) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write((encode_message(msg) + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterCrashError(f"adapter pipe closed while sending: {exc}") from exc

    def _read_message(self, timeout: float, *, phase: str) -> Hello | Response:
        try:
            line = self._reader.readline(timeout)
        except TimeoutError:
            self.close()
            raise AdapterTimeoutError(f"adapter did not answer within {timeout}s during {phase}") from None
        if line is None:
            code = self._proc.poll()
            raise AdapterCrashError(f"adapter exited (code {code}) before answering during {phase}")
        msg = decode_message(line.decode("utf-8"))
        if isinstance(msg, (InitRequest, BenchRequest, ShutdownRequest)):
            raise ProtocolViolationError(f"adapter sent a request message: {msg!r}")
        return msg

    def init(self, request: InitRequest) -> InitOk:
        """Compile/load the model; returns the adapter's reported compile time."""
        if self._initialized:
            raise ProtocolViolationError("init may only be sent once per session")
        self._send(request)
        reply = self._read_message(self.init_timeout_s, phase="init")
        if isinstance(reply, ErrorResponse):
            raise AdapterReportedError(reply.code, str(reply))
        if not isinstance(reply, InitOk):
            raise ProtocolViolationError(f"expected init_ok, got {reply!r}")
        self._initialized = True
        return reply

    def bench(self, request: BenchRequest) -> BenchOk:
        if not self._initialized:
            raise ProtocolViolationError("bench before init")
        if self._shut_down:
            raise ProtocolViolationError("bench after shutdown")
        self._send(request)
        reply = self._read_message(self.bench_timeout_s, phase="bench")
        if isinstance(reply, ErrorResponse):
            raise AdapterReportedError(reply.code, str(reply))
        if not isinstance(reply, BenchOk):
            raise ProtocolViolationError(f"expected bench_ok, got {reply!r}")
        if len(reply.throughput_samples) != request.repetitions:
            raise ProtocolViolationError(
                f"adapter returned {len(reply.throughput_samples)} samples for {request.repetitions} repetitions"
            )
        return reply

    def shutdown(self, timeout_s: float = 30.0) -> None:
        """Graceful stop: send shutdown, await bye, reap the process."""
        if self._shut_down:
            return
        self._send(ShutdownRequest())
        reply = self._read_message(timeout_s, phase="shutdown")
        if not isinstance(reply, Bye):
            raise ProtocolViolationError(f"expected bye, got {reply!r}")
        self._shut_down = True
        try:
            self._proc.wait(timeout=timeout_s)
        except subprocess.TimeoutExpired:
            self.close()
            raise AdapterTimeoutError("adapter did not exit after bye")

    def close(self) -> None:
        """Hard stop: kill the child if it is still alive and reap it."""
        if self._proc.poll() is None:
            self._proc.kill()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                pass
        for stream in (self._proc.stdin, self._proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass


def serve_backend(handler: Any, stdin: Any = None, stdout: Any = None) -> int:
    """Run an adapter main loop over stdio for a backend ``handler``.

    The handler provides ``on_init(InitRequest) -> InitOk | ErrorResponse``
    and ``on_bench(BenchRequest) -> BenchOk | ErrorResponse``; this loop owns
    the handshake, ordering enforcement, and shutdown. Returns the process
    exit code. If the handler defines ``after_reply()`` it is called after
    every request reply; fault-injecting backends use it to die mid-session.
    """
    import sys

    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    after_reply = getattr(handler, "after_reply", None)

    def emit(msg: Hello | Response) -> None:
        stdout.write(encode_message(msg) + "\n")
        stdout.flush()
        if after_reply is not None and not isinstance(msg, Hello):
            after_reply()

    emit(Hello())
    initialized = False
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            msg = decode_message(line)
        except ProtocolViolationError as exc:
            emit(ErrorResponse(code=ERR_UNKNOWN_TYPE, message=str(exc)))
            continue
        if isinstance(msg, InitRequest):
            if initialized:
                emit(ErrorResponse(code=ERR_PROTOCOL_VIOLATION, message="init sent twice"))
                continue
            reply = handler.on_init(msg)
            if isinstance(reply, InitOk):
                initialized = True
            emit(reply)
        elif isinstance(msg, BenchRequest):
            if not initialized:
                emit(ErrorResponse(code=ERR_PROTOCOL_VIOLATION, message="bench before init"))
                continue
            emit(handler.on_bench(msg))
        elif isinstance(msg, ShutdownRequest):
            emit(Bye())
            return 0
        else:
            emit(ErrorResponse(code=ERR_PROTOCOL_VIOLATION, message=f"unexpected message type {type(msg).__name__}"))
    # Host closed stdin without shutdown; treat as an orderly stop.
    return 0
