"""graphbench: distributed benchmark orchestration for NN graph compilers.

A coordinator deploys an experiment plan to device agents; each agent drives
compiler backends through a subprocess adapter protocol and checkpoints its
progress; the analysis layer turns archived results into throughput,
batch-scaling, and depth-scaling reports.

Submodule attributes are loaded lazily so short-lived adapter subprocesses
do not pay for numpy and friends.
"""
from __future__ import annotations

from typing import Any

__version__ = "0.1.0"

_EXPORTS = {
    "BlockStackSpec": "blocks",
    "CatalogEntry": "blocks",
    "catalog_lookup": "blocks",
    "catalog_names": "blocks",
    "conv_block_params": "blocks",
    "mha_block_params": "blocks",
    "stack_params": "blocks",
    "parse_plan": "config",
    "plan_from_document": "config",
    "plan_to_document": "config",
    "serialize_plan": "config",
    "DepthPoint": "metrics",
    "DepthScalingFit": "metrics",
    "ScalingSeries": "metrics",
    "ThroughputPoint": "metrics",
    "aggregate": "metrics",
    "ase": "metrics",
    "bsr": "metrics",
    "bucket_aggregate": "metrics",
    "depth_scaling_fit": "metrics",
    "rtr": "metrics",
    "speedup": "metrics",
    "BenchTask": "model",
    "CompilerSpec": "model",
    "DeviceSpec": "model",
    "ExperimentPlan": "model",
    "Measurement": "model",
    "ModelSpec": "model",
    "ResultRecord": "model",
    "TaskFailure": "model",
    "expand_plan": "model",
    "make_task_id": "model",
    "parse_task_id": "model",
    "validate_plan": "model",
    "ResultsArchive": "archive",
    "load_archive": "archive",
    "save_archive": "archive",
    "run_plan": "coordinator",
    "AgentServer": "agent",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name: str) -> Any:
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    from importlib import import_module

    module = import_module(f".{module_name}", __name__)
    value = getattr(module, name)
    globals()[name] = value
    return value


def __dir__() -> list[str]:
    return sorted(set(globals()) | set(__all__))
