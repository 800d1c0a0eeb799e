"""Deterministic synthetic backend: exercise the whole stack with no ML runtime.

The backend models one device's latency curve with a handful of knobs and
answers the adapter protocol from pure arithmetic, so full coordinator runs
are fast, hermetic, and bit-reproducible across hosts.

Latency model for batch size b under compiler c::

    latency_c(b) = (alpha * de / gamma_c + beta * b * max(1, b / s) * de) * jitter

* ``alpha`` is the fixed per-inference overhead batching amortizes,
  ``beta`` the per-sample cost, ``s`` the saturation batch beyond which
  per-sample cost grows linearly (memory pressure), and ``gamma_c`` the
  compiler's speedup on the fixed overhead.
* ``de`` is the effective depth: 1 for catalog models; for a block stack of
  depth d it is ``1 + (d - 1) * (1 - depth_discount_c)``. A compiler with a
  positive depth discount fuses deeper stacks disproportionately well, so
  its speedup over the identity baseline grows with depth.
* ``jitter`` is a per-repetition multiplicative factor in
  [1 - amplitude, 1 + amplitude), derived from a SHA-256 hash of the seed
  and the sample coordinates: deterministic for a given profile on any host.

Reported throughput per repetition is ``b / latency``. Compile time comes
from the profile per compiler (identity entries use 0: nothing compiles),
optionally growing linearly with batch size for backends that recompile per
batch. Unknown compiler ids are answered with an ``unknown_compiler`` error.

Run as an adapter: ``python -m graphbench.synthetic --profile profile.json``.
Fault-injection flags (``--fail-init``, ``--crash-after``, ``--sleep-init``,
``--sleep-bench``) exist so tests can drive crash and timeout paths.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

from .model import ModelSpec
from .protocol import (
    ERR_INIT_FAILED,
    ERR_UNKNOWN_COMPILER,
    BenchOk,
    BenchRequest,
    ErrorResponse,
    InitOk,
    InitRequest,
    serve_backend,
)


class UnknownCompilerError(KeyError):
    """The profile has no entry for the requested compiler id."""


@dataclass(frozen=True)
class CompilerProfile:
    """One compiler's behavior: speedup gamma, compile cost, depth discount."""

    speedup: float
    compile_time_s: float = 0.0
    compile_time_per_batch_s: float = 0.0
    depth_discount: float = 0.0

    def __post_init__(self) -> None:
        if self.speedup <= 0:
            raise ValueError(f"speedup must be > 0, got {self.speedup}")
        if self.compile_time_s < 0 or self.compile_time_per_batch_s < 0:
            raise ValueError("compile times must be >= 0")
        if not 0.0 <= self.depth_discount < 1.0:
            raise ValueError(f"depth_discount must be in [0, 1), got {self.depth_discount}")


@dataclass(frozen=True)
class SyntheticProfile:
    base_latency_s: float
    per_sample_cost_s: float
    compilers: Mapping[str, CompilerProfile]
    saturation_batch: float | None = None  # None: no saturation
    jitter_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_latency_s < 0:
            raise ValueError("base_latency_s must be >= 0")
        if self.per_sample_cost_s < 0:
            raise ValueError("per_sample_cost_s must be >= 0")
        if self.saturation_batch is not None and self.saturation_batch < 1:
            raise ValueError("saturation_batch must be >= 1")
        if not 0.0 <= self.jitter_amplitude < 1.0:
            raise ValueError("jitter_amplitude must be in [0, 1)")
        if self.base_latency_s == 0 and self.per_sample_cost_s == 0:
            raise ValueError("profile would produce zero latency")

    def compiler(self, compiler_id: str) -> CompilerProfile:
        try:
            return self.compilers[compiler_id]
        except KeyError:
            raise UnknownCompilerError(compiler_id) from None

    def to_document(self) -> dict[str, Any]:
        return {
            "base_latency_s": self.base_latency_s,
            "per_sample_cost_s": self.per_sample_cost_s,
            "saturation_batch": self.saturation_batch,
            "jitter_amplitude": self.jitter_amplitude,
            "seed": self.seed,
            "compilers": {
                cid: {
                    "speedup": c.speedup,
                    "compile_time_s": c.compile_time_s,
                    "compile_time_per_batch_s": c.compile_time_per_batch_s,
                    "depth_discount": c.depth_discount,
                }
                for cid, c in sorted(self.compilers.items())
            },
        }

    @staticmethod
    def from_document(doc: Mapping[str, Any]) -> SyntheticProfile:
        compilers = {
            str(cid): CompilerProfile(
                speedup=float(entry["speedup"]),
                compile_time_s=float(entry.get("compile_time_s", 0.0)),
                compile_time_per_batch_s=float(entry.get("compile_time_per_batch_s", 0.0)),
                depth_discount=float(entry.get("depth_discount", 0.0)),
            )
            for cid, entry in doc["compilers"].items()
        }
        saturation = doc.get("saturation_batch")
        return SyntheticProfile(
            base_latency_s=float(doc["base_latency_s"]),
            per_sample_cost_s=float(doc["per_sample_cost_s"]),
            compilers=compilers,
            saturation_batch=None if saturation is None else float(saturation),
            jitter_amplitude=float(doc.get("jitter_amplitude", 0.0)),
            seed=int(doc.get("seed", 0)),
        )


# Handy profile for demos and tests: one identity, one optimizing compiler.
DEFAULT_PROFILE = SyntheticProfile(
    base_latency_s=0.01,
    per_sample_cost_s=0.001,
    saturation_batch=8,
    jitter_amplitude=0.0,
    seed=0,
    compilers={
        "identity": CompilerProfile(speedup=1.0),
        "turbo": CompilerProfile(speedup=2.0, compile_time_s=3.5, depth_discount=0.5),
    },
)


def _effective_depth(model: ModelSpec | None, discount: float) -> float:
    if model is None or model.block is None:
        return 1.0
    return 1.0 + (model.block.depth - 1) * (1.0 - discount)


def _jitter_factor(profile: SyntheticProfile, compiler_id: str, model_key: str, batch_size: int, rep: int) -> float:
    if profile.jitter_amplitude == 0.0:
        return 1.0
    token = f"{profile.seed}|{compiler_id}|{model_key}|{batch_size}|{rep}"
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    unit = int.from_bytes(digest[:8], "big") / 2**64  # uniform in [0, 1)
    return 1.0 + profile.jitter_amplitude * (2.0 * unit - 1.0)


def synthetic_latency(
    profile: SyntheticProfile,
    compiler_id: str,
    batch_size: int,
    model: ModelSpec | None = None,
    rep: int = 0,
) -> float:
    """Modeled seconds for one batch inference; deterministic per coordinates."""
    comp = profile.compiler(compiler_id)
    de = _effective_depth(model, comp.depth_discount)
    if profile.saturation_batch is None:
        pressure = 1.0
    else:
        pressure = max(1.0, batch_size / profile.saturation_batch)
    base = profile.base_latency_s * de / comp.speedup
    per_sample = profile.per_sample_cost_s * batch_size * pressure * de
    model_key = model.key if model is not None else "-"
    return (base + per_sample) * _jitter_factor(profile, compiler_id, model_key, batch_size, rep)


def synthetic_throughput(
    profile: SyntheticProfile,
    compiler_id: str,
    batch_size: int,
    model: ModelSpec | None = None,
    rep: int = 0,
) -> float:
    """Samples per second at ``batch_size``: b / latency(b)."""
    return batch_size / synthetic_latency(profile, compiler_id, batch_size, model, rep)


def synthetic_samples(
    profile: SyntheticProfile,
    compiler_id: str,
    batch_size: int,
    repetitions: int,
    model: ModelSpec | None = None,
) -> list[float]:
    """The deterministic per-repetition throughput samples for one task."""
    return [synthetic_throughput(profile, compiler_id, batch_size, model, rep) for rep in range(repetitions)]


def synthetic_compile_time(profile: SyntheticProfile, compiler_id: str, batch_size: int) -> float:
    comp = profile.compiler(compiler_id)
    return comp.compile_time_s + comp.compile_time_per_batch_s * batch_size


@dataclass
class SyntheticBackend:
    """Adapter-protocol handler around a SyntheticProfile.

    Fault knobs: ``fail_init`` answers init with an error; ``crash_after``
    hard-exits the process after that many replies; the sleep knobs stall
    replies to trip host timeouts.
    """

    profile: SyntheticProfile
    fail_init: bool = False
    crash_after: int | None = None
    sleep_init_s: float = 0.0
    sleep_bench_s: float = 0.0
    _state: dict[str, Any] = field(default_factory=dict)
    _replies: int = 0

    def on_init(self, request: InitRequest) -> InitOk | ErrorResponse:
        if self.sleep_init_s:
            time.sleep(self.sleep_init_s)
        if self.fail_init:
            return ErrorResponse(code=ERR_INIT_FAILED, message="induced init failure")
        try:
            compile_time = synthetic_compile_time(self.profile, request.compiler_id, request.batch_size)
        except UnknownCompilerError:
            return ErrorResponse(
                code=ERR_UNKNOWN_COMPILER,
                message=f"profile defines no compiler {request.compiler_id!r}",
            )
        self._state = {
            "compiler_id": request.compiler_id,
            "batch_size": request.batch_size,
            "model": request.model,
        }
        return InitOk(compile_time_s=compile_time)

    def on_bench(self, request: BenchRequest) -> BenchOk | ErrorResponse:
        if self.sleep_bench_s:
            time.sleep(self.sleep_bench_s)
        samples = synthetic_samples(
            self.profile,
            self._state["compiler_id"],
            self._state["batch_size"],
            request.repetitions,
            self._state["model"],
        )
        return BenchOk(throughput_samples=tuple(samples))

    def after_reply(self) -> None:
        self._replies += 1
        if self.crash_after is not None and self._replies >= self.crash_after:
            # Simulated hard crash: no bye, no flush discipline, nonzero exit.
            os._exit(1)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphbench-synthetic",
        description="Synthetic benchmark adapter (newline-delimited JSON on stdio)",
    )
    parser.add_argument("--profile", help="path to a profile JSON file (default: built-in demo profile)")
    parser.add_argument("--fail-init", action="store_true", help="answer init with an error")
    parser.add_argument("--crash-after", type=int, default=None, metavar="N", help="exit(1) after N replies")
    parser.add_argument("--sleep-init", type=float, default=0.0, metavar="S", help="stall init replies S seconds")
    parser.add_argument("--sleep-bench", type=float, default=0.0, metavar="S", help="stall bench replies S seconds")
    args = parser.parse_args(argv)

    if args.profile:
        with open(args.profile, "r", encoding="utf-8") as fh:
            profile = SyntheticProfile.from_document(json.load(fh))
    else:
        profile = DEFAULT_PROFILE

    backend = SyntheticBackend(
        profile=profile,
        fail_init=args.fail_init,
        crash_after=args.crash_after,
        sleep_init_s=args.sleep_init,
        sleep_bench_s=args.sleep_bench,
    )
    return serve_backend(backend)


if __name__ == "__main__":
    sys.exit(main())
