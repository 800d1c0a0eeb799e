"""Core domain model: devices, compilers, models, plans, tasks, results.

A plan is the full cartesian description of an experiment; ``expand_plan``
turns it into the flat task list that agents execute. Task identifiers are a
pure function of the four coordinates (device, compiler, model key, batch
size): the coordinates are percent-encoded and joined with ``/`` so arbitrary
identifier strings cannot collide, and a short hash of the same coordinates is
appended for at-a-glance integrity checks.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Mapping
from urllib.parse import quote, unquote

from .blocks import BlockStackSpec, CONV_DEFAULT_INPUT, MHA_SEQ_LEN, catalog_lookup

DEFAULT_REPETITIONS = 100
DEFAULT_WARMUP = 10
DEFAULT_CHECKPOINT_EVERY = 1
DEFAULT_CPU_SAMPLE_INTERVAL_MS = 100
DEFAULT_INIT_TIMEOUT_S = 24 * 3600.0
DEFAULT_BENCH_TIMEOUT_S = 3600.0

# Default eval input for catalog models (overridable per model in the plan).
CATALOG_DEFAULT_INPUT = (3, 224, 224)

_TASK_ID_RE = re.compile(r"^(?P<body>.+)#(?P<digest>[0-9a-f]{8})$")


class PlanValidationError(ValueError):
    """A plan violates structural invariants.

    ``violations`` is a list of (dotted field path, message) pairs covering
    every problem found, not just the first.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        lines = "; ".join(f"{path}: {msg}" for path, msg in violations)
        super().__init__(f"invalid plan: {lines}")


class TaskIdError(ValueError):
    """A task id string is malformed or fails its integrity digest."""


@dataclass(frozen=True)
class DeviceSpec:
    """A benchmark device reachable at ``address`` (host:port of its agent)."""

    device_id: str
    address: str
    labels: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class CompilerSpec:
    """One compiler backend configuration on one device.

    ``flags`` are opaque string-to-string pairs passed through to the adapter
    untouched. Exactly one compiler id per plan must set ``is_identity``;
    it denotes the uncompiled native-framework baseline every ratio metric
    divides by.
    """

    compiler_id: str
    flags: Mapping[str, str] = field(default_factory=dict)
    is_identity: bool = False


@dataclass(frozen=True)
class ModelSpec:
    """Either a catalog architecture or a synthetic block stack.

    Exactly one of ``catalog``/``block`` is set. ``input_shape`` is the
    per-sample shape (no batch dimension); defaults are filled in by the
    constructors below.
    """

    catalog: str | None = None
    block: BlockStackSpec | None = None
    input_shape: tuple[int, ...] = ()
    init_params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.catalog is None) == (self.block is None):
            raise ValueError("exactly one of catalog/block must be set")

    @property
    def key(self) -> str:
        """Stable model identifier used in task ids and result records."""
        if self.catalog is not None:
            return self.catalog
        assert self.block is not None
        return self.block.key

    @staticmethod
    def from_catalog(
        name: str,
        input_shape: tuple[int, ...] | None = None,
        init_params: Mapping[str, str] | None = None,
    ) -> ModelSpec:
        return ModelSpec(
            catalog=name,
            input_shape=tuple(input_shape) if input_shape else CATALOG_DEFAULT_INPUT,
            init_params=dict(init_params or {}),
        )

    @staticmethod
    def from_block(
        kind: str,
        width: int,
        depth: int,
        input_shape: tuple[int, ...] | None = None,
        init_params: Mapping[str, str] | None = None,
    ) -> ModelSpec:
        block = BlockStackSpec(kind=kind, width=width, depth=depth)
        if input_shape:
            shape = tuple(input_shape)
        elif kind == "conv":
            shape = CONV_DEFAULT_INPUT
        else:
            shape = (MHA_SEQ_LEN, width)
        return ModelSpec(block=block, input_shape=shape, init_params=dict(init_params or {}))


@dataclass(frozen=True)
class BenchTask:
    """One unit of agent work: measure one (device, compiler, model, batch)."""

    task_id: str
    device_id: str
    compiler_id: str
    model: ModelSpec
    batch_size: int
    repetitions: int
    warmup: int


@dataclass(frozen=True)
class Measurement:
    """Raw output of executing one task.

    ``cpu_samples`` is empty when the bench window was shorter than one CPU
    sampling interval. Wall timestamps bracket the measured window and are
    excluded from aggregated records so reports stay run-independent.
    """

    task_id: str
    throughput_samples: tuple[float, ...]
    cpu_samples: tuple[float, ...]
    compile_time_s: float
    wall_start: float
    wall_end: float


@dataclass(frozen=True)
class ResultRecord:
    """Per-task aggregate: repetition mean/std plus CPU stats when sampled."""

    device_id: str
    compiler_id: str
    model_key: str
    batch_size: int
    throughput_mean: float
    throughput_std: float
    cpu_mean: float | None
    cpu_std: float | None
    compile_time_s: float


@dataclass(frozen=True)
class TaskFailure:
    """Failure-manifest entry for a task that produced no measurement."""

    task_id: str
    device_id: str
    cause: str


@dataclass(frozen=True)
class ExperimentPlan:
    plan_id: str
    devices: tuple[DeviceSpec, ...]
    compilers: Mapping[str, tuple[CompilerSpec, ...]]
    models: tuple[ModelSpec, ...]
    batch_sizes: tuple[int, ...]
    repetitions: int = DEFAULT_REPETITIONS
    warmup: int = DEFAULT_WARMUP
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY
    cpu_sample_interval_ms: int = DEFAULT_CPU_SAMPLE_INTERVAL_MS
    init_timeout_s: float = DEFAULT_INIT_TIMEOUT_S
    bench_timeout_s: float = DEFAULT_BENCH_TIMEOUT_S

    def __post_init__(self) -> None:
        # accept any sequence so equality does not hinge on caller container choice
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "batch_sizes", tuple(self.batch_sizes))
        object.__setattr__(self, "compilers", {d: tuple(c) for d, c in self.compilers.items()})

    def device(self, device_id: str) -> DeviceSpec:
        for dev in self.devices:
            if dev.device_id == device_id:
                return dev
        raise KeyError(device_id)

    def compiler(self, device_id: str, compiler_id: str) -> CompilerSpec:
        for comp in self.compilers.get(device_id, ()):
            if comp.compiler_id == compiler_id:
                return comp
        raise KeyError((device_id, compiler_id))

    def identity_compiler_id(self) -> str:
        for comps in self.compilers.values():
            for comp in comps:
                if comp.is_identity:
                    return comp.compiler_id
        raise LookupError("plan has no identity compiler")


def make_task_id(device_id: str, compiler_id: str, model_key: str, batch_size: int) -> str:
    """Build the canonical task id for one coordinate tuple.

    Deterministic and injective over distinct coordinates: each component is
    percent-encoded (so embedded ``/`` or ``#`` cannot collide with the
    separators) and an 8-hex-digit digest of the canonical tuple is appended.
    """
    parts = (
        quote(device_id, safe=""),
        quote(compiler_id, safe=""),
        quote(model_key, safe=""),
        f"b{int(batch_size)}",
    )
    body = "/".join(parts)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()[:8]
    return f"{body}#{digest}"


def parse_task_id(task_id: str) -> tuple[str, str, str, int]:
    """Recover (device_id, compiler_id, model_key, batch_size) from a task id.

    Raises TaskIdError on malformed input or digest mismatch.
    """
    m = _TASK_ID_RE.match(task_id)
    if not m:
        raise TaskIdError(f"malformed task id: {task_id!r}")
    body = m.group("body")
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()[:8]
    if digest != m.group("digest"):
        raise TaskIdError(f"task id digest mismatch: {task_id!r}")
    parts = body.split("/")
    if len(parts) != 4 or not parts[3].startswith("b"):
        raise TaskIdError(f"malformed task id body: {task_id!r}")
    try:
        batch = int(parts[3][1:])
    except ValueError:
        raise TaskIdError(f"malformed batch component in task id: {task_id!r}") from None
    return unquote(parts[0]), unquote(parts[1]), unquote(parts[2]), batch


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port`` into its components; raises ValueError if malformed."""
    host, sep, port_text = address.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must be host:port, got {address!r}")
    port = int(port_text)
    if not 0 < port < 65536:
        raise ValueError(f"port out of range in address {address!r}")
    return host, port


def validate_plan(plan: ExperimentPlan, *, require_unit_batch: bool = False) -> list[tuple[str, str]]:
    """Return every invariant violation as (dotted path, message) pairs.

    ``require_unit_batch`` additionally demands batch size 1, which the
    batch-scaling ratio metrics need as their denominator.
    """
    problems: list[tuple[str, str]] = []

    if not plan.plan_id:
        problems.append(("plan_id", "must be non-empty"))

    seen_devices: set[str] = set()
    for i, dev in enumerate(plan.devices):
        path = f"devices[{i}]"
        if not dev.device_id:
            problems.append((f"{path}.device_id", "must be non-empty"))
        elif dev.device_id in seen_devices:
            problems.append((f"{path}.device_id", f"duplicate device_id {dev.device_id!r}"))
        else:
            seen_devices.add(dev.device_id)
        try:
            parse_address(dev.address)
        except ValueError as exc:
            problems.append((f"{path}.address", str(exc)))

    identity_ids: set[str] = set()
    identity_flag_by_id: dict[str, bool] = {}
    for device_id, comps in plan.compilers.items():
        if device_id not in seen_devices:
            problems.append((f"compilers.{device_id}", "does not match any declared device"))
        if not comps:
            problems.append((f"compilers.{device_id}", "must list at least one compiler"))
        seen_comps: set[str] = set()
        for j, comp in enumerate(comps):
            path = f"compilers.{device_id}[{j}]"
            if not comp.compiler_id:
                problems.append((f"{path}.compiler_id", "must be non-empty"))
            elif comp.compiler_id in seen_comps:
                problems.append((f"{path}.compiler_id", f"duplicate compiler_id {comp.compiler_id!r}"))
            seen_comps.add(comp.compiler_id)
            prior = identity_flag_by_id.get(comp.compiler_id)
            if prior is not None and prior != comp.is_identity:
                problems.append(
                    (f"{path}.is_identity", f"compiler {comp.compiler_id!r} is_identity differs across devices")
                )
            identity_flag_by_id[comp.compiler_id] = comp.is_identity
            if comp.is_identity:
                identity_ids.add(comp.compiler_id)
    for device_id in seen_devices:
        if device_id not in plan.compilers:
            problems.append((f"compilers.{device_id}", "device has no compiler list"))
    if plan.devices:
        if len(identity_ids) == 0:
            problems.append(("compilers", "plan must declare exactly one identity compiler; found none"))
        elif len(identity_ids) > 1:
            problems.append(
                ("compilers", f"plan must declare exactly one identity compiler; found {sorted(identity_ids)}")
            )

    if not plan.models:
        problems.append(("models", "must list at least one model"))
    seen_keys: set[str] = set()
    for i, model in enumerate(plan.models):
        path = f"models[{i}]"
        if model.catalog is not None:
            try:
                catalog_lookup(model.catalog)
            except KeyError:
                problems.append((f"{path}.catalog", f"unknown catalog model {model.catalog!r}"))
        if any(dim < 1 for dim in model.input_shape):
            problems.append((f"{path}.input_shape", "entries must be >= 1"))
        if not model.input_shape:
            problems.append((f"{path}.input_shape", "must be non-empty"))
        if model.key in seen_keys:
            problems.append((path, f"duplicate model key {model.key!r}"))
        seen_keys.add(model.key)

    if not plan.batch_sizes:
        problems.append(("batch_sizes", "must be non-empty"))
    else:
        if any(b < 1 for b in plan.batch_sizes):
            problems.append(("batch_sizes", "entries must be >= 1"))
        if any(b2 <= b1 for b1, b2 in zip(plan.batch_sizes, plan.batch_sizes[1:])):
            problems.append(("batch_sizes", "must be strictly increasing"))
        if require_unit_batch and 1 not in plan.batch_sizes:
            problems.append(("batch_sizes", "batch size 1 is required by the requested scaling metrics"))

    if plan.repetitions < 1:
        problems.append(("repetitions", "must be >= 1"))
    if plan.warmup < 0:
        problems.append(("warmup", "must be >= 0"))
    if plan.checkpoint_every < 1:
        problems.append(("checkpoint_every", "must be >= 1"))
    if plan.cpu_sample_interval_ms < 1:
        problems.append(("cpu_sample_interval_ms", "must be >= 1"))
    if plan.init_timeout_s <= 0:
        problems.append(("init_timeout_s", "must be > 0"))
    if plan.bench_timeout_s <= 0:
        problems.append(("bench_timeout_s", "must be > 0"))

    return problems


def check_plan(plan: ExperimentPlan, *, require_unit_batch: bool = False) -> None:
    """Raise PlanValidationError when the plan violates any invariant."""
    problems = validate_plan(plan, require_unit_batch=require_unit_batch)
    if problems:
        raise PlanValidationError(problems)


def expand_plan(plan: ExperimentPlan) -> list[BenchTask]:
    """Expand the plan's cartesian product into tasks, sorted by task id.

    Pure: repeated calls yield identical lists. Task count equals
    sum over devices of len(compilers) * len(models) * len(batch_sizes).
    """
    tasks: list[BenchTask] = []
    for dev in plan.devices:
        for comp in plan.compilers.get(dev.device_id, ()):
            for model in plan.models:
                for batch in plan.batch_sizes:
                    task_id = make_task_id(dev.device_id, comp.compiler_id, model.key, batch)
                    tasks.append(
                        BenchTask(
                            task_id=task_id,
                            device_id=dev.device_id,
                            compiler_id=comp.compiler_id,
                            model=model,
                            batch_size=batch,
                            repetitions=plan.repetitions,
                            warmup=plan.warmup,
                        )
                    )
    tasks.sort(key=lambda t: t.task_id)
    return tasks
