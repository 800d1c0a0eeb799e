"""Results archive: one self-contained JSON document per run.

The archive embeds the plan snapshot, every per-task aggregate record, and
the failure manifest, so analysis never needs the original plan file or any
live device. Files ending in ``.gz`` (conventionally ``.json.gz``) are
gzip-compressed transparently. Round-trips exactly: load(save(a)) == a.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .config import plan_from_document, plan_to_document
from .model import ExperimentPlan, ResultRecord, TaskFailure

ARCHIVE_SCHEMA_VERSION = 1


class ArchiveFormatError(ValueError):
    """The file is not a results archive this tool can decode."""


class ArchiveVersionError(ValueError):
    """The archive was written under an incompatible schema version."""


@dataclass(frozen=True)
class ResultsArchive:
    plan: ExperimentPlan
    records: tuple[ResultRecord, ...]
    failures: tuple[TaskFailure, ...]
    tool_version: str = __version__
    created: str = ""
    schema_version: int = ARCHIVE_SCHEMA_VERSION

    @staticmethod
    def new(
        plan: ExperimentPlan,
        records: list[ResultRecord] | tuple[ResultRecord, ...],
        failures: list[TaskFailure] | tuple[TaskFailure, ...],
    ) -> ResultsArchive:
        return ResultsArchive(
            plan=plan,
            records=tuple(records),
            failures=tuple(failures),
            created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )


def _record_to_document(r: ResultRecord) -> dict[str, Any]:
    return {
        "device_id": r.device_id,
        "compiler_id": r.compiler_id,
        "model_key": r.model_key,
        "batch_size": r.batch_size,
        "throughput_mean": r.throughput_mean,
        "throughput_std": r.throughput_std,
        "cpu_mean": r.cpu_mean,
        "cpu_std": r.cpu_std,
        "compile_time_s": r.compile_time_s,
    }


def _record_from_document(doc: Mapping[str, Any]) -> ResultRecord:
    return ResultRecord(
        device_id=str(doc["device_id"]),
        compiler_id=str(doc["compiler_id"]),
        model_key=str(doc["model_key"]),
        batch_size=int(doc["batch_size"]),
        throughput_mean=float(doc["throughput_mean"]),
        throughput_std=float(doc["throughput_std"]),
        cpu_mean=None if doc["cpu_mean"] is None else float(doc["cpu_mean"]),
        cpu_std=None if doc["cpu_std"] is None else float(doc["cpu_std"]),
        compile_time_s=float(doc["compile_time_s"]),
    )


def archive_to_document(archive: ResultsArchive) -> dict[str, Any]:
    return {
        "schema_version": archive.schema_version,
        "tool_version": archive.tool_version,
        "created": archive.created,
        "plan": plan_to_document(archive.plan),
        "records": [_record_to_document(r) for r in archive.records],
        "failures": [
            {"task_id": f.task_id, "device_id": f.device_id, "cause": f.cause} for f in archive.failures
        ],
    }


def archive_from_document(doc: Any) -> ResultsArchive:
    if not isinstance(doc, Mapping):
        raise ArchiveFormatError(f"archive must be a JSON object, got {type(doc).__name__}")
    version = doc.get("schema_version")
    if version != ARCHIVE_SCHEMA_VERSION:
        raise ArchiveVersionError(
            f"archive schema version {version!r} unsupported; this tool speaks {ARCHIVE_SCHEMA_VERSION}"
        )
    try:
        return ResultsArchive(
            plan=plan_from_document(doc["plan"]),
            records=tuple(_record_from_document(r) for r in doc["records"]),
            failures=tuple(
                TaskFailure(task_id=str(f["task_id"]), device_id=str(f["device_id"]), cause=str(f["cause"]))
                for f in doc["failures"]
            ),
            tool_version=str(doc.get("tool_version", "")),
            created=str(doc.get("created", "")),
            schema_version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveFormatError(f"malformed archive: {exc}") from exc


def save_archive(archive: ResultsArchive, path: str | Path) -> None:
    path = Path(path)
    payload = json.dumps(archive_to_document(archive), sort_keys=True, indent=2).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.name.endswith(".gz"):
        # mtime pinned so equal archives compress to equal bytes.
        with gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_archive(path: str | Path) -> ResultsArchive:
    path = Path(path)
    try:
        if path.name.endswith(".gz"):
            with gzip.open(path, "rb") as fh:
                raw = fh.read()
        else:
            raw = path.read_bytes()
        doc = json.loads(raw.decode("utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, gzip.BadGzipFile) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ArchiveFormatError(f"cannot read archive {path}: {exc}") from exc
    return archive_from_document(doc)
