"""Device agent: executes benchmark tasks and survives being killed.

The agent is a small TCP daemon. A coordinator dials it, deploys a plan
subset, and the agent works through the tasks sequentially, one adapter
process per task. Progress is checkpointed to ``<state_dir>/<plan_id>.ckpt.json``
with an atomic temp-file-plus-rename write, so a crash at any point loses at
most the in-progress task's partial work: on the next deployment of the same
plan the completed set is intact and the in-progress task re-executes from
scratch (measurements are at-least-once, deduplicated at the coordinator).

CPU utilization is sampled system-wide (the whole device is the testbed) on
a background thread, strictly inside the measured bench window: warmup runs
as a separate untimed bench call before the sampler starts. If the window is
shorter than one sampling interval the sample list is empty and aggregation
reports CPU as absent rather than zero.
"""
from __future__ import annotations

import json
import logging
import os
import socket
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence
from urllib.parse import quote

import psutil

from . import __version__
from .config import plan_from_document
from .model import BenchTask, ExperimentPlan, Measurement, expand_plan
from .protocol import (
    AdapterCrashError,
    AdapterReportedError,
    AdapterSession,
    AdapterTimeoutError,
    BenchRequest,
    InitRequest,
    ProtocolViolationError,
)
from .wire import (
    MSG_ACK,
    MSG_DEPLOY_PLAN,
    MSG_HELLO,
    MSG_NACK,
    MSG_PROGRESS,
    MSG_RESULTS_UPLOAD,
    MSG_TEARDOWN,
    WIRE_PROTOCOL_VERSION,
    ConnectionClosed,
    MessageSocket,
    WireError,
    measurement_from_document,
    measurement_to_document,
)

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1

# One benchmark at a time per process, even across server instances: the
# measured compute resource (and psutil's module-level CPU counter state)
# is shared.
_EXECUTION_LOCK = threading.Lock()


class CorruptCheckpointError(ValueError):
    """Checkpoint file exists but cannot be decoded."""


class CheckpointVersionError(ValueError):
    """Checkpoint was written by an incompatible schema version."""


class PlanMismatchError(ValueError):
    """Checkpoint belongs to a different plan or task universe."""


class AdapterMissingError(KeyError):
    """The adapters manifest has no spawn command for a compiler id."""


class TaskExecutionError(RuntimeError):
    """A task failed; the cause string lands in the failure manifest."""


class _SimulatedKill(BaseException):
    """Raised by the chaos hook to emulate an abrupt agent death in tests.

    Derives from BaseException so ordinary error handling cannot swallow it.
    """


@dataclass
class Checkpoint:
    plan_id: str
    completed: dict[str, Measurement] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    in_progress: str | None = None
    schema_version: int = CHECKPOINT_SCHEMA_VERSION
    written_at: float = 0.0


def checkpoint_path(state_dir: str | Path, plan_id: str) -> Path:
    """Checkpoint location for a plan; the id is escaped for filename safety."""
    return Path(state_dir) / f"{quote(plan_id, safe='')}.ckpt.json"


def write_checkpoint(cp: Checkpoint, path: str | Path) -> None:
    """Atomically persist the checkpoint: write a temp file, fsync, rename."""
    path = Path(path)
    doc = {
        "schema_version": cp.schema_version,
        "plan_id": cp.plan_id,
        "completed": {tid: measurement_to_document(m) for tid, m in sorted(cp.completed.items())},
        "failed": dict(sorted(cp.failed.items())),
        "in_progress": cp.in_progress,
        "written_at": time.time(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load a checkpoint; FileNotFoundError passes through untouched."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
        version = doc["schema_version"]
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise CheckpointVersionError(
                f"checkpoint schema {version!r} unsupported; this agent writes {CHECKPOINT_SCHEMA_VERSION}"
            )
        return Checkpoint(
            plan_id=str(doc["plan_id"]),
            completed={str(tid): measurement_from_document(m) for tid, m in doc["completed"].items()},
            failed={str(tid): str(cause) for tid, cause in doc["failed"].items()},
            in_progress=doc["in_progress"],
            schema_version=version,
            written_at=float(doc["written_at"]),
        )
    except CheckpointVersionError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, WireError) as exc:
        raise CorruptCheckpointError(f"cannot decode checkpoint {path}: {exc}") from exc


def resume_tasks(
    plan: ExperimentPlan,
    checkpoint: Checkpoint | None,
    task_ids: Sequence[str] | None = None,
) -> list[BenchTask]:
    """Tasks still to run: the plan expansion minus completed ones.

    ``task_ids`` restricts the universe to one device's deployed subset.
    A checkpoint naming a different plan, or tasks outside the universe,
    raises PlanMismatchError. Previously failed tasks are re-attempted.
    """
    tasks = expand_plan(plan)
    if task_ids is not None:
        wanted = set(task_ids)
        unknown = wanted - {t.task_id for t in tasks}
        if unknown:
            raise PlanMismatchError(f"deployed task ids not in plan expansion: {sorted(unknown)[:3]}")
        tasks = [t for t in tasks if t.task_id in wanted]
    if checkpoint is None:
        return tasks
    if checkpoint.plan_id != plan.plan_id:
        raise PlanMismatchError(
            f"checkpoint is for plan {checkpoint.plan_id!r}, not {plan.plan_id!r}"
        )
    universe = {t.task_id for t in tasks}
    seen = set(checkpoint.completed) | set(checkpoint.failed)
    if checkpoint.in_progress is not None:
        seen.add(checkpoint.in_progress)
    strays = seen - universe
    if strays:
        raise PlanMismatchError(f"checkpoint references tasks outside the plan: {sorted(strays)[:3]}")
    return [t for t in tasks if t.task_id not in checkpoint.completed]


class CpuSampler:
    """Samples system-wide CPU percent on a thread at a fixed interval.

    Samples cover only full intervals inside start()..stop(); a window
    shorter than one interval yields no samples at all.
    """

    def __init__(self, interval_ms: int):
        self._interval_s = interval_ms / 1000.0
        self._samples: list[float] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        psutil.cpu_percent(None)  # prime the interval counter
        self._thread = threading.Thread(target=self._run, name="cpu-sampler", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self._interval_s):
            value = psutil.cpu_percent(None)
            self._samples.append(min(100.0, max(0.0, value)))

    def stop(self) -> tuple[float, ...]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        return tuple(self._samples)


def load_adapters_manifest(path: str | Path) -> dict[str, list[str]]:
    """Read the JSON mapping of compiler_id to adapter spawn argv."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("adapters manifest must be a JSON object")
    manifest: dict[str, list[str]] = {}
    for compiler_id, argv in doc.items():
        if (
            not isinstance(argv, list)
            or not argv
            or not all(isinstance(part, str) for part in argv)
        ):
            raise ValueError(f"manifest entry {compiler_id!r} must be a non-empty list of strings")
        manifest[str(compiler_id)] = list(argv)
    return manifest


def execute_task(
    task: BenchTask,
    argv: Sequence[str],
    flags: Mapping[str, str],
    *,
    cpu_sample_interval_ms: int = 100,
    init_timeout_s: float = 24 * 3600.0,
    bench_timeout_s: float = 3600.0,
) -> Measurement:
    """Run one task through a fresh adapter process.

    Warmup runs as its own untimed bench call so the CPU sampler only covers
    the measured window. Any adapter failure (crash, timeout, reported
    error, protocol breach) is wrapped in TaskExecutionError.
    """
    wall_start = time.time()
    try:
        with AdapterSession(argv, init_timeout_s=init_timeout_s, bench_timeout_s=bench_timeout_s) as session:
            init_ok = session.init(
                InitRequest(
                    model=task.model,
                    compiler_id=task.compiler_id,
                    batch_size=task.batch_size,
                    flags=dict(flags),
                )
            )
            if task.warmup > 0:
                session.bench(BenchRequest(repetitions=task.warmup, warmup=0))
            sampler = CpuSampler(cpu_sample_interval_ms)
            sampler.start()
            try:
                bench_ok = session.bench(BenchRequest(repetitions=task.repetitions, warmup=0))
            finally:
                cpu_samples = sampler.stop()
            session.shutdown()
    except AdapterReportedError as exc:
        raise TaskExecutionError(f"adapter error: {exc}") from exc
    except AdapterCrashError as exc:
        raise TaskExecutionError(f"adapter crashed: {exc}") from exc
    except AdapterTimeoutError as exc:
        raise TaskExecutionError(f"adapter timeout: {exc}") from exc
    except ProtocolViolationError as exc:
        raise TaskExecutionError(f"adapter protocol violation: {exc}") from exc
    return Measurement(
        task_id=task.task_id,
        throughput_samples=bench_ok.throughput_samples,
        cpu_samples=cpu_samples,
        compile_time_s=init_ok.compile_time_s,
        wall_start=wall_start,
        wall_end=time.time(),
    )


class TaskRunner:
    """Sequential executor for one deployed plan subset, with checkpointing.

    The checkpoint is flushed when a task starts (marking it in-progress and
    making every earlier completion durable) and again after completions at
    the plan's ``checkpoint_every`` cadence plus once at the end.
    """

    def __init__(
        self,
        plan: ExperimentPlan,
        checkpoint: Checkpoint,
        ckpt_path: Path,
        manifest: Mapping[str, Sequence[str]],
        *,
        progress: Callable[[int, int, str], None] | None = None,
        chaos_stop_after: int | None = None,
    ):
        self.plan = plan
        self.checkpoint = checkpoint
        self.ckpt_path = ckpt_path
        self.manifest = manifest
        self.progress = progress
        self.chaos_stop_after = chaos_stop_after

    def run(self, tasks: Sequence[BenchTask]) -> Checkpoint:
        cp = self.checkpoint
        total = len(tasks) + len(cp.completed)
        executed = 0
        since_flush = 0
        with _EXECUTION_LOCK:
            for task in tasks:
                if self.chaos_stop_after is not None and executed >= self.chaos_stop_after:
                    raise _SimulatedKill(f"chaos kill after {executed} tasks")
                cp.in_progress = task.task_id
                write_checkpoint(cp, self.ckpt_path)
                try:
                    measurement = self._execute(task)
                except TaskExecutionError as exc:
                    log.warning("task %s failed: %s", task.task_id, exc)
                    cp.failed[task.task_id] = str(exc)
                else:
                    cp.completed[task.task_id] = measurement
                    cp.failed.pop(task.task_id, None)
                cp.in_progress = None
                executed += 1
                since_flush += 1
                if since_flush >= self.plan.checkpoint_every:
                    write_checkpoint(cp, self.ckpt_path)
                    since_flush = 0
                if self.progress is not None:
                    self.progress(len(cp.completed) + len(cp.failed), total, task.task_id)
            write_checkpoint(cp, self.ckpt_path)
        return cp

    def _execute(self, task: BenchTask) -> Measurement:
        argv = self.manifest.get(task.compiler_id)
        if argv is None:
            raise TaskExecutionError(
                f"no adapter for compiler {task.compiler_id!r} in manifest"
            )
        flags = self.plan.compiler(task.device_id, task.compiler_id).flags
        return execute_task(
            task,
            argv,
            flags,
            cpu_sample_interval_ms=self.plan.cpu_sample_interval_ms,
            init_timeout_s=self.plan.init_timeout_s,
            bench_timeout_s=self.plan.bench_timeout_s,
        )


class AgentServer:
    """The agent daemon: accepts coordinator sessions and runs deployments.

    ``chaos_stop_after_tasks`` is a test hook that kills the session (as an
    abrupt connection drop, checkpoint left as-is) after that many tasks.
    """

    def __init__(
        self,
        listen: str,
        state_dir: str | Path,
        manifest: Mapping[str, Sequence[str]],
        *,
        io_timeout_s: float = 3600.0,
        chaos_stop_after_tasks: int | None = None,
    ):
        host, _, port_text = listen.rpartition(":")
        if not host:
            raise ValueError(f"listen must be host:port, got {listen!r}")
        self._listen = (host, int(port_text))
        self.state_dir = Path(state_dir)
        self.manifest = {cid: list(argv) for cid, argv in manifest.items()}
        self.io_timeout_s = io_timeout_s
        self.chaos_stop_after_tasks = chaos_stop_after_tasks
        self._sock: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self._conn_threads: list[threading.Thread] = []

    @property
    def address(self) -> str:
        assert self._sock is not None, "server not started"
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def start(self) -> None:
        self.state_dir.mkdir(parents=True, exist_ok=True)
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(self._listen)
        sock.listen(8)
        self._sock = sock
        self._accept_thread = threading.Thread(target=self._accept_loop, name="agent-accept", daemon=True)
        self._accept_thread.start()
        log.info("agent listening on %s", self.address)

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            # close() alone does not wake a thread blocked in accept()
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)
        for thread in self._conn_threads:
            thread.join(timeout=5)

    def serve_forever(self) -> None:
        """Block until stop(); for use as a foreground daemon."""
        assert self._accept_thread is not None, "server not started"
        while self._accept_thread.is_alive():
            self._accept_thread.join(timeout=1.0)

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._stopping.is_set():
            try:
                conn, peer = self._sock.accept()
            except OSError:
                return
            thread = threading.Thread(
                target=self._handle_connection,
                args=(conn, peer),
                name=f"agent-conn-{peer[0]}:{peer[1]}",
                daemon=True,
            )
            thread.start()
            self._conn_threads.append(thread)

    def _handle_connection(self, conn: socket.socket, peer: tuple) -> None:
        msock = MessageSocket(conn)
        msock.settimeout(self.io_timeout_s)
        try:
            self._session(msock, peer)
        except _SimulatedKill as exc:
            log.warning("chaos: simulating agent death: %s", exc)
        except (ConnectionClosed, TimeoutError, WireError, OSError) as exc:
            log.warning("session with %s ended: %s", peer, exc)
        finally:
            msock.close()

    def _session(self, msock: MessageSocket, peer: tuple) -> None:
        hello = msock.recv()
        plan_id = hello["plan_id"]
        if hello["type"] != MSG_HELLO:
            msock.send(MSG_NACK, plan_id, re=hello["seq"], reason="expected hello")
            return
        if hello.get("protocol") != WIRE_PROTOCOL_VERSION:
            msock.send(
                MSG_NACK,
                plan_id,
                re=hello["seq"],
                reason=f"protocol {hello.get('protocol')!r} unsupported",
            )
            return
        msock.send(MSG_HELLO, plan_id, protocol=WIRE_PROTOCOL_VERSION, agent_version=__version__)

        deploy = msock.recv()
        if deploy["type"] != MSG_DEPLOY_PLAN:
            msock.send(MSG_NACK, plan_id, re=deploy["seq"], reason="expected deploy_plan")
            return
        try:
            plan = plan_from_document(deploy["plan"])
            if plan.plan_id != plan_id:
                raise ValueError(f"deploy carries plan {plan.plan_id!r} in a {plan_id!r} session")
            task_ids = [str(t) for t in deploy["task_ids"]]
            ckpt_path = checkpoint_path(self.state_dir, plan.plan_id)
            checkpoint: Checkpoint | None = None
            if ckpt_path.exists():
                checkpoint = load_checkpoint(ckpt_path)
            remaining = resume_tasks(plan, checkpoint, task_ids)
            if checkpoint is None:
                checkpoint = Checkpoint(plan_id=plan.plan_id)
        except (
            ValueError,
            KeyError,
            CorruptCheckpointError,
            CheckpointVersionError,
            PlanMismatchError,
        ) as exc:
            msock.send(MSG_NACK, plan_id, re=deploy["seq"], reason=f"deploy rejected: {exc}")
            return
        msock.send(MSG_ACK, plan_id, re=deploy["seq"])

        def progress(done: int, total: int, current: str) -> None:
            msock.send(MSG_PROGRESS, plan_id, completed=done, total=total, current_task_id=current)

        runner = TaskRunner(
            plan,
            checkpoint,
            ckpt_path,
            self.manifest,
            progress=progress,
            chaos_stop_after=self.chaos_stop_after_tasks,
        )
        checkpoint = runner.run(remaining)

        upload_seq = msock.send(
            MSG_RESULTS_UPLOAD,
            plan_id,
            measurements=[measurement_to_document(m) for _, m in sorted(checkpoint.completed.items())],
            failures=[{"task_id": tid, "cause": cause} for tid, cause in sorted(checkpoint.failed.items())],
        )
        reply = msock.recv()
        if reply["type"] != MSG_ACK or reply.get("re") != upload_seq:
            log.warning("upload not acknowledged (%s); keeping checkpoint", reply["type"])
            return

        teardown = msock.recv()
        if teardown["type"] != MSG_TEARDOWN:
            msock.send(MSG_NACK, plan_id, re=teardown["seq"], reason="expected teardown")
            return
        try:
            ckpt_path.unlink()
        except FileNotFoundError:
            pass
        msock.send(MSG_ACK, plan_id, re=teardown["seq"])
