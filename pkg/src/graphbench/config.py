"""Plan files: strict YAML schema, parsing, and canonical serialization.

The document is versioned (``version: 1``) and strict: unknown keys anywhere
are rejected with their dotted path, so typos like ``warm_up`` fail loudly
instead of silently falling back to a default. ``serialize_plan`` emits a
canonical form (fixed key order, sorted flag/label maps), so equal plans
always serialize to identical bytes and parse(serialize(plan)) == plan.

Schema sketch::

    version: 1
    plan_id: demo
    devices:
      - device_id: orin
        address: 10.0.0.5:7070
        labels: {arch: arm64}        # optional
    compilers:
      orin:
        - compiler_id: identity
          is_identity: true
        - compiler_id: trt
          flags: {precision: fp16}   # opaque strings, passed through
    models:
      - catalog: ResNet-50
      - block: {kind: conv, width: 64, depth: 6}
    batch_sizes: [1, 2, 4, 8]
    repetitions: 100                 # optional, default 100
    warmup: 10                       # optional, default 10
    checkpoint_every: 1              # optional, default 1
    cpu_sample_interval_ms: 100      # optional, default 100
    init_timeout_s: 86400.0          # optional, default 24h
    bench_timeout_s: 3600.0          # optional, default 1h
"""
from __future__ import annotations

from typing import Any, Mapping

from .model import (
    DEFAULT_BENCH_TIMEOUT_S,
    DEFAULT_CHECKPOINT_EVERY,
    DEFAULT_CPU_SAMPLE_INTERVAL_MS,
    DEFAULT_INIT_TIMEOUT_S,
    DEFAULT_REPETITIONS,
    DEFAULT_WARMUP,
    CompilerSpec,
    DeviceSpec,
    ExperimentPlan,
    ModelSpec,
    PlanValidationError,
    check_plan,
)

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "version",
    "plan_id",
    "devices",
    "compilers",
    "models",
    "batch_sizes",
    "repetitions",
    "warmup",
    "checkpoint_every",
    "cpu_sample_interval_ms",
    "init_timeout_s",
    "bench_timeout_s",
}
_REQUIRED_TOP_KEYS = {"version", "plan_id", "devices", "compilers", "models", "batch_sizes"}
_DEVICE_KEYS = {"device_id", "address", "labels"}
_COMPILER_KEYS = {"compiler_id", "flags", "is_identity"}
_MODEL_KEYS = {"catalog", "block", "input_shape", "init_params"}
_BLOCK_KEYS = {"kind", "width", "depth"}


class PlanSyntaxError(ValueError):
    """The document is not well-formed YAML (or not a mapping at all)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class PlanVersionError(ValueError):
    """The document declares a schema version this tool does not speak."""


class _DocErrors:
    """Collects (path, message) pairs so one parse reports every problem."""

    def __init__(self) -> None:
        self.items: list[tuple[str, str]] = []

    def add(self, path: str, message: str) -> None:
        self.items.append((path, message))

    def raise_if_any(self) -> None:
        if self.items:
            raise PlanValidationError(self.items)


def _expect_str(doc: Mapping[str, Any], key: str, path: str, errors: _DocErrors) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value:
        errors.add(f"{path}.{key}" if path else key, "must be a non-empty string")
        return ""
    return value

def _expect_int(value: Any, path: str, errors: _DocErrors, default: int) -> int:
    # bool is an int subclass; reject it explicitly.
    if isinstance(value, bool) or not isinstance(value, int):
        errors.add(path, f"must be an integer, got {type(value).__name__}")
        return default
    return value


def _expect_number(value: Any, path: str, errors: _DocErrors, default: float) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.add(path, f"must be a number, got {type(value).__name__}")
        return default
    return float(value)


def _check_keys(doc: Mapping[str, Any], allowed: set[str], path: str, errors: _DocErrors) -> None:
    for key in doc:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            errors.add(where, "unknown key")


def _parse_str_map(value: Any, path: str, errors: _DocErrors) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        errors.add(path, "must be a mapping of strings to strings")
        return {}
    out: dict[str, str] = {}
    for k, v in value.items():
        if not isinstance(k, str):
            errors.add(f"{path}.{k}", "key must be a string")
            continue
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            errors.add(f"{path}.{k}", "value must be a string or number")
            continue
        out[k] = v if isinstance(v, str) else repr(v)
    return out


def _parse_device(entry: Any, path: str, errors: _DocErrors) -> DeviceSpec | None:
    if not isinstance(entry, Mapping):
        errors.add(path, "must be a mapping")
        return None
    _check_keys(entry, _DEVICE_KEYS, path, errors)
    device_id = _expect_str(entry, "device_id", path, errors)
    address = _expect_str(entry, "address", path, errors)
    labels = _parse_str_map(entry.get("labels"), f"{path}.labels", errors)
    if not device_id or not address:
        return None
    return DeviceSpec(device_id=device_id, address=address, labels=labels)


def _parse_compiler(entry: Any, path: str, errors: _DocErrors) -> CompilerSpec | None:
    if not isinstance(entry, Mapping):
        errors.add(path, "must be a mapping")
        return None
    _check_keys(entry, _COMPILER_KEYS, path, errors)
    compiler_id = _expect_str(entry, "compiler_id", path, errors)
    flags = _parse_str_map(entry.get("flags"), f"{path}.flags", errors)
    is_identity = entry.get("is_identity", False)
    if not isinstance(is_identity, bool):
        errors.add(f"{path}.is_identity", "must be a boolean")
        is_identity = False
    if not compiler_id:
        return None
    return CompilerSpec(compiler_id=compiler_id, flags=flags, is_identity=is_identity)


def _parse_model(entry: Any, path: str, errors: _DocErrors) -> ModelSpec | None:
    if not isinstance(entry, Mapping):
        errors.add(path, "must be a mapping")
        return None
    _check_keys(entry, _MODEL_KEYS, path, errors)
    has_catalog = "catalog" in entry
    has_block = "block" in entry
    if has_catalog == has_block:
        errors.add(path, "must set exactly one of catalog/block")
        return None

    input_shape: tuple[int, ...] | None = None
    if "input_shape" in entry:
        raw_shape = entry["input_shape"]
        if not isinstance(raw_shape, list) or not raw_shape:
            errors.add(f"{path}.input_shape", "must be a non-empty list of integers")
            return None
        dims: list[int] = []
        for k, dim in enumerate(raw_shape):
            dims.append(_expect_int(dim, f"{path}.input_shape[{k}]", errors, 1))
        input_shape = tuple(dims)
    init_params = _parse_str_map(entry.get("init_params"), f"{path}.init_params", errors)

    if has_catalog:
        name = entry["catalog"]
        if not isinstance(name, str) or not name:
            errors.add(f"{path}.catalog", "must be a non-empty string")
            return None
        return ModelSpec.from_catalog(name, input_shape=input_shape, init_params=init_params)

    block = entry["block"]
    if not isinstance(block, Mapping):
        errors.add(f"{path}.block", "must be a mapping")
        return None
    _check_keys(block, _BLOCK_KEYS, f"{path}.block", errors)
    kind = block.get("kind")
    if kind not in ("conv", "mha"):
        errors.add(f"{path}.block.kind", f"must be 'conv' or 'mha', got {kind!r}")
        return None
    width = _expect_int(block.get("width"), f"{path}.block.width", errors, 0)
    depth = _expect_int(block.get("depth"), f"{path}.block.depth", errors, 0)
    if width < 1:
        errors.add(f"{path}.block.width", "must be >= 1")
        return None
    if depth < 1:
        errors.add(f"{path}.block.depth", "must be >= 1")
        return None
    return ModelSpec.from_block(kind, width, depth, input_shape=input_shape, init_params=init_params)


def model_from_document(doc: Any, path: str = "model") -> ModelSpec:
    """Decode one model entry; raises PlanValidationError with dotted paths."""
    errors = _DocErrors()
    model = _parse_model(doc, path, errors)
    errors.raise_if_any()
    assert model is not None
    return model


def model_to_document(model: ModelSpec) -> dict[str, Any]:
    """Canonical JSON-compatible form of one model entry."""
    entry: dict[str, Any] = {}
    if model.catalog is not None:
        entry["catalog"] = model.catalog
    else:
        assert model.block is not None
        entry["block"] = {
            "kind": model.block.kind,
            "width": model.block.width,
            "depth": model.block.depth,
        }
    entry["input_shape"] = list(model.input_shape)
    if model.init_params:
        entry["init_params"] = {k: model.init_params[k] for k in sorted(model.init_params)}
    return entry


def plan_from_document(doc: Any) -> ExperimentPlan:
    """Build and validate a plan from an already-decoded document mapping."""
    if not isinstance(doc, Mapping):
        raise PlanSyntaxError(f"plan document must be a mapping, got {type(doc).__name__}")

    version = doc.get("version")
    if version is None:
        raise PlanVersionError("missing required key 'version'")
    if version != SCHEMA_VERSION:
        raise PlanVersionError(f"unsupported plan schema version {version!r}; this tool speaks {SCHEMA_VERSION}")

    errors = _DocErrors()
    _check_keys(doc, _TOP_KEYS, "", errors)
    for key in sorted(_REQUIRED_TOP_KEYS - set(doc)):
        errors.add(key, "missing required key")
    errors.raise_if_any()

    plan_id = _expect_str(doc, "plan_id", "", errors)

    devices: list[DeviceSpec] = []
    raw_devices = doc["devices"]
    if raw_devices is None:
        raw_devices = []
    if not isinstance(raw_devices, list):
        errors.add("devices", "must be a list")
        raw_devices = []
    for i, entry in enumerate(raw_devices):
        dev = _parse_device(entry, f"devices[{i}]", errors)
        if dev is not None:
            devices.append(dev)

    compilers: dict[str, tuple[CompilerSpec, ...]] = {}
    raw_compilers = doc["compilers"]
    if raw_compilers is None:
        raw_compilers = {}
    if not isinstance(raw_compilers, Mapping):
        errors.add("compilers", "must be a mapping of device_id to compiler lists")
        raw_compilers = {}
    for device_id, entries in raw_compilers.items():
        path = f"compilers.{device_id}"
        if not isinstance(entries, list):
            errors.add(path, "must be a list")
            continue
        comps: list[CompilerSpec] = []
        for j, entry in enumerate(entries):
            comp = _parse_compiler(entry, f"{path}[{j}]", errors)
            if comp is not None:
                comps.append(comp)
        compilers[str(device_id)] = tuple(comps)

    models: list[ModelSpec] = []
    raw_models = doc["models"]
    if not isinstance(raw_models, list) or not raw_models:
        errors.add("models", "must be a non-empty list")
        raw_models = []
    for i, entry in enumerate(raw_models):
        model = _parse_model(entry, f"models[{i}]", errors)
        if model is not None:
            models.append(model)

    raw_batches = doc["batch_sizes"]
    batch_sizes: list[int] = []
    if not isinstance(raw_batches, list) or not raw_batches:
        errors.add("batch_sizes", "must be a non-empty list of integers")
    else:
        for i, b in enumerate(raw_batches):
            batch_sizes.append(_expect_int(b, f"batch_sizes[{i}]", errors, 1))

    repetitions = _expect_int(doc.get("repetitions", DEFAULT_REPETITIONS), "repetitions", errors, DEFAULT_REPETITIONS)
    warmup = _expect_int(doc.get("warmup", DEFAULT_WARMUP), "warmup", errors, DEFAULT_WARMUP)
    checkpoint_every = _expect_int(
        doc.get("checkpoint_every", DEFAULT_CHECKPOINT_EVERY), "checkpoint_every", errors, DEFAULT_CHECKPOINT_EVERY
    )
    cpu_interval = _expect_int(
        doc.get("cpu_sample_interval_ms", DEFAULT_CPU_SAMPLE_INTERVAL_MS),
        "cpu_sample_interval_ms",
        errors,
        DEFAULT_CPU_SAMPLE_INTERVAL_MS,
    )
    init_timeout = _expect_number(
        doc.get("init_timeout_s", DEFAULT_INIT_TIMEOUT_S), "init_timeout_s", errors, DEFAULT_INIT_TIMEOUT_S
    )
    bench_timeout = _expect_number(
        doc.get("bench_timeout_s", DEFAULT_BENCH_TIMEOUT_S), "bench_timeout_s", errors, DEFAULT_BENCH_TIMEOUT_S
    )
    errors.raise_if_any()

    plan = ExperimentPlan(
        plan_id=plan_id,
        devices=tuple(devices),
        compilers=compilers,
        models=tuple(models),
        batch_sizes=tuple(batch_sizes),
        repetitions=repetitions,
        warmup=warmup,
        checkpoint_every=checkpoint_every,
        cpu_sample_interval_ms=cpu_interval,
        init_timeout_s=init_timeout,
        bench_timeout_s=bench_timeout,
    )
    check_plan(plan)
    return plan


def parse_plan(text: str) -> ExperimentPlan:
    """Parse a YAML plan document.

    Raises PlanSyntaxError for malformed YAML, PlanVersionError for a
    missing/unsupported version, and PlanValidationError (with dotted field
    paths) for schema or invariant violations.
    """
    import yaml

    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise PlanSyntaxError(f"invalid YAML: {exc.problem or exc}", line, column) from exc
    except yaml.YAMLError as exc:
        raise PlanSyntaxError(f"invalid YAML: {exc}") from exc
    return plan_from_document(doc)


def plan_to_document(plan: ExperimentPlan) -> dict[str, Any]:
    """Canonical JSON-compatible document for ``plan`` (fixed key order)."""
    devices = []
    for dev in plan.devices:
        entry: dict[str, Any] = {"device_id": dev.device_id, "address": dev.address}
        if dev.labels:
            entry["labels"] = {k: dev.labels[k] for k in sorted(dev.labels)}
        devices.append(entry)

    compilers: dict[str, Any] = {}
    for device_id in sorted(plan.compilers):
        comps = []
        for comp in plan.compilers[device_id]:
            centry: dict[str, Any] = {"compiler_id": comp.compiler_id}
            if comp.flags:
                centry["flags"] = {k: comp.flags[k] for k in sorted(comp.flags)}
            if comp.is_identity:
                centry["is_identity"] = True
            comps.append(centry)
        compilers[device_id] = comps

    models = [model_to_document(model) for model in plan.models]

    return {
        "version": SCHEMA_VERSION,
        "plan_id": plan.plan_id,
        "devices": devices,
        "compilers": compilers,
        "models": models,
        "batch_sizes": list(plan.batch_sizes),
        "repetitions": plan.repetitions,
        "warmup": plan.warmup,
        "checkpoint_every": plan.checkpoint_every,
        "cpu_sample_interval_ms": plan.cpu_sample_interval_ms,
        "init_timeout_s": plan.init_timeout_s,
        "bench_timeout_s": plan.bench_timeout_s,
    }


def serialize_plan(plan: ExperimentPlan) -> str:
    """Render the canonical YAML form; equal plans yield identical bytes."""
    import yaml

    return yaml.safe_dump(plan_to_document(plan), sort_keys=False, default_flow_style=False)
