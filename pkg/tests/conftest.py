"""Shared fixtures: synthetic profiles, plan builders, live agent servers.

End-to-end tests run real AgentServer instances on 127.0.0.1 ephemeral ports
and spawn the synthetic backend as genuine subprocesses, so the whole stack
(framing, checkpoints, adapter protocol) is exercised without any ML runtime.
"""
from __future__ import annotations

import contextlib
import json
import sys
from pathlib import Path

import pytest

from graphbench.agent import AgentServer
from graphbench.model import (
    CompilerSpec,
    DeviceSpec,
    ExperimentPlan,
    ModelSpec,
)
from graphbench.synthetic import CompilerProfile, SyntheticProfile

SYNTHETIC_ARGV = [sys.executable, "-m", "graphbench.synthetic"]

# Deterministic profile with a little jitter so aggregation has real spread.
E2E_PROFILE = SyntheticProfile(
    base_latency_s=0.01,
    per_sample_cost_s=0.001,
    saturation_batch=8,
    jitter_amplitude=0.02,
    seed=7,
    compilers={
        "identity": CompilerProfile(speedup=1.0),
        "turbo": CompilerProfile(speedup=2.0, compile_time_s=3.5, depth_discount=0.5),
    },
)


def write_profile(tmp_path: Path, profile: SyntheticProfile, name: str = "profile.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(profile.to_document()), encoding="utf-8")
    return path


def synthetic_manifest(
    compiler_ids: tuple[str, ...],
    profile_path: Path | None = None,
    extra_args: tuple[str, ...] = (),
) -> dict[str, list[str]]:
    argv = list(SYNTHETIC_ARGV)
    if profile_path is not None:
        argv += ["--profile", str(profile_path)]
    argv += list(extra_args)
    return {cid: list(argv) for cid in compiler_ids}


def two_compiler_specs() -> tuple[CompilerSpec, ...]:
    return (
        CompilerSpec(compiler_id="identity", is_identity=True),
        CompilerSpec(compiler_id="turbo"),
    )


def build_plan(
    plan_id: str,
    addresses: dict[str, str],
    models: tuple[ModelSpec, ...],
    batch_sizes: tuple[int, ...],
    *,
    repetitions: int = 3,
    warmup: int = 0,
    checkpoint_every: int = 1,
    bench_timeout_s: float = 60.0,
) -> ExperimentPlan:
    """A plan over the given live agents with identity+turbo on every device.

    The huge CPU sampling interval keeps CPU sample lists deterministically
    empty, which byte-reproducibility tests rely on.
    """
    devices = tuple(DeviceSpec(device_id=d, address=a) for d, a in sorted(addresses.items()))
    return ExperimentPlan(
        plan_id=plan_id,
        devices=devices,
        compilers={d.device_id: two_compiler_specs() for d in devices},
        models=models,
        batch_sizes=batch_sizes,
        repetitions=repetitions,
        warmup=warmup,
        checkpoint_every=checkpoint_every,
        cpu_sample_interval_ms=10_000_000,
        init_timeout_s=60.0,
        bench_timeout_s=bench_timeout_s,
    )


@contextlib.contextmanager
def running_agents(
    tmp_path: Path,
    device_ids: tuple[str, ...],
    manifest: dict[str, list[str]],
    *,
    chaos_stop_after_tasks: int | None = None,
):
    """Start one AgentServer per device id; yields {device_id: address}."""
    servers = []
    try:
        addresses = {}
        for device_id in device_ids:
            server = AgentServer(
                "127.0.0.1:0",
                tmp_path / f"state-{device_id}",
                manifest,
                chaos_stop_after_tasks=chaos_stop_after_tasks,
            )
            server.start()
            servers.append(server)
            addresses[device_id] = server.address
        yield addresses
    finally:
        for server in servers:
            server.stop()


@pytest.fixture()
def e2e_profile_path(tmp_path: Path) -> Path:
    return write_profile(tmp_path, E2E_PROFILE)
