"""Coordinator: deploy a plan to its device agents and collect the results.

One thread per device drives the session state machine::

    UNREACHED -> DEPLOYED -> RUNNING -> REPORTED -> TORN_DOWN
        \\________________any state________________/-> FAILED

Teardown is a global barrier: it is sent only after every non-failed device
has reported, so a straggler can still be re-polled while other devices'
results are safely uploaded. Uploads are deduplicated by task id; an agent
re-uploading identical measurements after a reconnect is idempotent, while a
conflicting payload for an already-stored task id is rejected and the
offending device marked failed.

The optional session journal records one digest line per message in each
direction; orchestration invariants (teardown-after-reported, strictly
increasing sequence numbers) can be audited from it after the fact.
"""
from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from . import __version__
from .config import plan_to_document
from .metrics import aggregate
from .model import (
    BenchTask,
    ExperimentPlan,
    Measurement,
    ResultRecord,
    TaskFailure,
    check_plan,
    expand_plan,
    parse_address,
    parse_task_id,
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
    Journal,
    MessageSocket,
    WireError,
)

log = logging.getLogger(__name__)

# Device session states.
UNREACHED = "unreached"
DEPLOYED = "deployed"
RUNNING = "running"
REPORTED = "reported"
TORN_DOWN = "torn_down"
FAILED = "failed"


class NoDevicesReachableError(RuntimeError):
    """Not a single device in the plan accepted a deployment."""


class ConflictError(ValueError):
    """Two uploads disagree about the same task id's payload."""


class ResultsStore:
    """Task-id-keyed measurement store with idempotent deduplication."""

    def __init__(self) -> None:
        self._measurements: dict[str, Measurement] = {}
        self._lock = threading.Lock()

    def add(self, measurement: Measurement) -> bool:
        """Store one measurement; True if new, False if an identical replay.

        Raises ConflictError when the task id is already present with a
        different payload.
        """
        with self._lock:
            existing = self._measurements.get(measurement.task_id)
            if existing is None:
                self._measurements[measurement.task_id] = measurement
                return True
            if existing == measurement:
                return False
            raise ConflictError(f"conflicting payloads for task {measurement.task_id}")

    def measurements(self) -> list[Measurement]:
        with self._lock:
            return [self._measurements[tid] for tid in sorted(self._measurements)]

    def __contains__(self, task_id: str) -> bool:
        with self._lock:
            return task_id in self._measurements


@dataclass
class DeviceSession:
    """Mutable per-device state as the coordinator sees it."""

    device_id: str
    address: str
    task_ids: list[str]
    state: str = UNREACHED
    cause: str | None = None
    uploaded_failures: list[tuple[str, str]] = field(default_factory=list)
    msock: MessageSocket | None = None
    progress_done: int = 0
    progress_total: int = 0

    def fail(self, cause: str) -> None:
        self.state = FAILED
        self.cause = cause


@dataclass
class RunResult:
    """Everything a run produced: aggregates, failures, session outcomes."""

    plan: ExperimentPlan
    records: list[ResultRecord]
    failures: list[TaskFailure]
    device_states: dict[str, str]
    device_causes: dict[str, str | None]

    @property
    def complete(self) -> bool:
        return not self.failures


def records_from_measurements(measurements: Iterable[Measurement]) -> list[ResultRecord]:
    """Aggregate raw measurements into per-task records, sorted by coordinates.

    CPU stats are present only when the bench window produced samples.
    """
    records = []
    for m in measurements:
        device_id, compiler_id, model_key, batch_size = parse_task_id(m.task_id)
        t_mean, t_std = aggregate(m.throughput_samples)
        if m.cpu_samples:
            cpu_mean, cpu_std = aggregate(m.cpu_samples)
        else:
            cpu_mean = cpu_std = None
        records.append(
            ResultRecord(
                device_id=device_id,
                compiler_id=compiler_id,
                model_key=model_key,
                batch_size=batch_size,
                throughput_mean=t_mean,
                throughput_std=t_std,
                cpu_mean=cpu_mean,
                cpu_std=cpu_std,
                compile_time_s=m.compile_time_s,
            )
        )
    records.sort(key=lambda r: (r.device_id, r.compiler_id, r.model_key, r.batch_size))
    return records


def collect(
    store: ResultsStore,
    uploads: Iterable[Mapping[str, Any]],
) -> tuple[int, int]:
    """Merge one upload's measurement documents into the store.

    Returns (new, duplicate) counts; raises ConflictError on a payload
    mismatch. Exposed separately so upload handling is testable without
    sockets.
    """
    from .wire import measurement_from_document

    new = dup = 0
    for doc in uploads:
        if store.add(measurement_from_document(doc)):
            new += 1
        else:
            dup += 1
    return new, dup


class Coordinator:
    def __init__(
        self,
        plan: ExperimentPlan,
        *,
        journal_path: str | None = None,
        dial_timeout_s: float = 10.0,
        io_timeout_s: float = 24 * 3600.0,
        teardown_timeout_s: float = 60.0,
    ):
        check_plan(plan)
        self.plan = plan
        self.journal = Journal(journal_path)
        self.dial_timeout_s = dial_timeout_s
        self.io_timeout_s = io_timeout_s
        self.teardown_timeout_s = teardown_timeout_s
        self.store = ResultsStore()
        tasks = expand_plan(plan)
        self._tasks_by_device: dict[str, list[BenchTask]] = {d.device_id: [] for d in plan.devices}
        for task in tasks:
            self._tasks_by_device[task.device_id].append(task)

    def run(self) -> RunResult:
        """Execute the whole plan; returns aggregates plus a failure manifest.

        Raises NoDevicesReachableError when not a single device deployed
        (including the degenerate empty-device plan).
        """
        sessions = [
            DeviceSession(
                device_id=dev.device_id,
                address=dev.address,
                task_ids=[t.task_id for t in self._tasks_by_device[dev.device_id]],
            )
            for dev in self.plan.devices
        ]
        threads = [
            threading.Thread(target=self._drive_session, args=(s,), name=f"coord-{s.device_id}", daemon=True)
            for s in sessions
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        if not any(s.state == REPORTED for s in sessions):
            for s in sessions:
                self._close_session(s)
            if sessions:
                detail = "; ".join(f"{s.device_id}: {s.cause or s.state}" for s in sessions)
            else:
                detail = "plan has no devices"
            raise NoDevicesReachableError(f"no device accepted a deployment: {detail}")

        # Teardown barrier: every non-failed device has reported by now.
        for s in sessions:
            if s.state == REPORTED:
                self._teardown(s)
            self._close_session(s)

        records = records_from_measurements(self.store.measurements())
        failures = self._failure_manifest(sessions)
        return RunResult(
            plan=self.plan,
            records=records,
            failures=failures,
            device_states={s.device_id: s.state for s in sessions},
            device_causes={s.device_id: s.cause for s in sessions},
        )

    # -- per-device session driving ------------------------------------

    def _send(self, session: DeviceSession, mtype: str, **payload: Any) -> int:
        assert session.msock is not None
        seq = session.msock.send(mtype, self.plan.plan_id, **payload)
        self.journal.record(
            session.device_id, "send", {"type": mtype, "plan_id": self.plan.plan_id, "seq": seq, **payload}
        )
        return seq

    def _recv(self, session: DeviceSession) -> dict[str, Any]:
        assert session.msock is not None
        message = session.msock.recv()
        self.journal.record(session.device_id, "recv", message)
        return message

    def _drive_session(self, session: DeviceSession) -> None:
        try:
            host, port = parse_address(session.address)
            sock = socket.create_connection((host, port), timeout=self.dial_timeout_s)
            session.msock = MessageSocket(sock)
            session.msock.settimeout(self.io_timeout_s)
        except OSError as exc:
            session.fail(f"device unreachable: {exc}")
            return
        try:
            self._send(session, MSG_HELLO, protocol=WIRE_PROTOCOL_VERSION, coordinator_version=__version__)
            hello = self._recv(session)
            if hello["type"] != MSG_HELLO:
                session.fail(f"agent answered hello with {hello['type']}")
                return
            if hello.get("protocol") != WIRE_PROTOCOL_VERSION:
                session.fail(f"agent speaks wire protocol {hello.get('protocol')!r}")
                return

            deploy_seq = self._send(
                session,
                MSG_DEPLOY_PLAN,
                device_id=session.device_id,
                plan=plan_to_document(self.plan),
                task_ids=session.task_ids,
            )
            reply = self._recv(session)
            if reply["type"] != MSG_ACK or reply.get("re") != deploy_seq:
                session.fail(f"deploy rejected: {reply.get('reason', reply['type'])}")
                return
            session.state = DEPLOYED
            session.progress_total = len(session.task_ids)

            while True:
                message = self._recv(session)
                if message["type"] == MSG_PROGRESS:
                    session.state = RUNNING
                    session.progress_done = int(message.get("completed", 0))
                    session.progress_total = int(message.get("total", session.progress_total))
                elif message["type"] == MSG_RESULTS_UPLOAD:
                    try:
                        new, dup = collect(self.store, message.get("measurements", []))
                    except (ConflictError, WireError) as exc:
                        self._send(session, MSG_NACK, re=message["seq"], reason=str(exc))
                        session.fail(f"upload rejected: {exc}")
                        return
                    self._send(session, MSG_ACK, re=message["seq"])
                    session.uploaded_failures = [
                        (str(f["task_id"]), str(f["cause"])) for f in message.get("failures", [])
                    ]
                    session.state = REPORTED
                    log.info(
                        "%s reported: %d new, %d duplicate, %d failed",
                        session.device_id,
                        new,
                        dup,
                        len(session.uploaded_failures),
                    )
                    return
                else:
                    session.fail(f"unexpected message {message['type']} while awaiting results")
                    return
        except (ConnectionClosed, TimeoutError, WireError, OSError) as exc:
            session.fail(f"session error: {exc}")

    def _teardown(self, session: DeviceSession) -> None:
        assert session.msock is not None
        try:
            session.msock.settimeout(self.teardown_timeout_s)
            seq = self._send(session, MSG_TEARDOWN)
            reply = self._recv(session)
            if reply["type"] == MSG_ACK and reply.get("re") == seq:
                session.state = TORN_DOWN
            else:
                session.fail(f"teardown not acknowledged: {reply['type']}")
        except (ConnectionClosed, TimeoutError, WireError, OSError) as exc:
            session.fail(f"teardown failed: {exc}")

    def _close_session(self, session: DeviceSession) -> None:
        if session.msock is not None:
            session.msock.close()
            session.msock = None

    # -- outcome assembly ------------------------------------------------

    def _failure_manifest(self, sessions: list[DeviceSession]) -> list[TaskFailure]:
        failures: list[TaskFailure] = []
        for session in sessions:
            reported_failures = dict(session.uploaded_failures)
            for task_id in session.task_ids:
                if task_id in self.store:
                    continue
                if task_id in reported_failures:
                    failures.append(
                        TaskFailure(task_id=task_id, device_id=session.device_id, cause=reported_failures[task_id])
                    )
                else:
                    cause = session.cause or "task produced no measurement"
                    failures.append(TaskFailure(task_id=task_id, device_id=session.device_id, cause=cause))
        failures.sort(key=lambda f: f.task_id)
        return failures


def run_plan(
    plan: ExperimentPlan,
    *,
    journal_path: str | None = None,
    dial_timeout_s: float = 10.0,
    io_timeout_s: float = 24 * 3600.0,
) -> RunResult:
    """Deploy ``plan`` to its agents, await every device, aggregate results."""
    coordinator = Coordinator(
        plan,
        journal_path=journal_path,
        dial_timeout_s=dial_timeout_s,
        io_timeout_s=io_timeout_s,
    )
    return coordinator.run()
