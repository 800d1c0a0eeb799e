"""Synthetic backend model: closed forms, determinism, fault knobs."""
from __future__ import annotations

import json
import math

import pytest

from graphbench.model import ModelSpec
from graphbench.protocol import AdapterSession, BenchRequest, InitRequest
from graphbench.synthetic import (
    DEFAULT_PROFILE,
    CompilerProfile,
    SyntheticProfile,
    UnknownCompilerError,
    synthetic_compile_time,
    synthetic_latency,
    synthetic_samples,
    synthetic_throughput,
)

from conftest import SYNTHETIC_ARGV

# alpha=0.01, beta=0.001, gamma=1, no saturation: latency(b) = 0.01 + 0.001*b.
FLAT = SyntheticProfile(
    base_latency_s=0.01,
    per_sample_cost_s=0.001,
    saturation_batch=None,
    jitter_amplitude=0.0,
    seed=0,
    compilers={"identity": CompilerProfile(speedup=1.0), "turbo": CompilerProfile(speedup=2.0)},
)


def test_flat_profile_closed_form() -> None:
    t1 = synthetic_throughput(FLAT, "identity", 1)
    t4 = synthetic_throughput(FLAT, "identity", 4)
    assert t1 == pytest.approx(1 / 0.011, abs=1e-9)  # 90.909...
    assert t4 == pytest.approx(4 / 0.014, abs=1e-9)  # 285.714...
    assert t4 / t1 == pytest.approx(3.142857142857143, abs=1e-12)  # RTR(4)
    assert t4 / (4 * t1) == pytest.approx(0.7857142857142857, abs=1e-12)  # ASE(4)


def test_speedup_factor_divides_base_cost_only() -> None:
    # turbo halves the fixed overhead, leaving per-sample cost untouched.
    assert synthetic_latency(FLAT, "turbo", 1) == pytest.approx(0.005 + 0.001, abs=1e-15)
    assert synthetic_latency(FLAT, "turbo", 8) == pytest.approx(0.005 + 0.008, abs=1e-15)


def test_saturation_pressure() -> None:
    profile = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.001,
        saturation_batch=8,
        compilers={"identity": CompilerProfile(speedup=1.0)},
    )
    # Below and at saturation the pressure factor is exactly 1.
    assert synthetic_latency(profile, "identity", 4) == synthetic_latency(FLAT, "identity", 4)
    assert synthetic_latency(profile, "identity", 8) == synthetic_latency(FLAT, "identity", 8)
    # Past it, per-sample cost scales by b/s.
    assert synthetic_latency(profile, "identity", 16) == pytest.approx(
        0.01 + 0.001 * 16 * 2.0, abs=1e-15
    )


def test_ase_strictly_decreasing_past_saturation() -> None:
    profile = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.001,
        saturation_batch=4,
        compilers={"identity": CompilerProfile(speedup=1.0)},
    )
    t1 = synthetic_throughput(profile, "identity", 1)
    ases = [synthetic_throughput(profile, "identity", b) / (b * t1) for b in (4, 8, 16, 32, 64)]
    assert all(b > a for a, b in zip(ases[1:], ases)), ases


def test_effective_depth() -> None:
    shallow = ModelSpec.from_block("conv", 16, 1)
    deep = ModelSpec.from_block("conv", 16, 5)
    catalog = ModelSpec.from_catalog("ResNet-50")
    # Depth multiplies latency linearly for a discount-free compiler.
    base = synthetic_latency(FLAT, "identity", 2, shallow)
    assert synthetic_latency(FLAT, "identity", 2, deep) == pytest.approx(5 * base, rel=1e-12)
    # Catalog models and no-model calls behave as depth 1.
    assert synthetic_latency(FLAT, "identity", 2, catalog) == base
    assert synthetic_latency(FLAT, "identity", 2, None) == base


def test_depth_discount_retention_closed_form() -> None:
    delta = 0.5
    profile = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.001,
        compilers={
            "identity": CompilerProfile(speedup=1.0),
            "turbo": CompilerProfile(speedup=2.0, depth_discount=delta),
        },
    )

    def speedup_at(depth: int) -> float:
        model = ModelSpec.from_block("conv", 16, depth)
        return synthetic_throughput(profile, "turbo", 2, model) / synthetic_throughput(
            profile, "identity", 2, model
        )

    for depth in (2, 3, 6, 12):
        expected = depth / (1 + (depth - 1) * (1 - delta)) * speedup_at(1)
        assert speedup_at(depth) == pytest.approx(expected, rel=1e-12)
    # Retention for the 1..6 sweep: 6 / 3.5.
    assert speedup_at(6) / speedup_at(1) == pytest.approx(12.0 / 7.0, rel=1e-12)
    assert speedup_at(6) > speedup_at(1)  # deeper stacks fuse better


def test_compile_time_model() -> None:
    profile = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.0,
        compilers={
            "identity": CompilerProfile(speedup=1.0),
            "jit": CompilerProfile(speedup=1.5, compile_time_s=2.0, compile_time_per_batch_s=0.25),
        },
    )
    assert synthetic_compile_time(profile, "identity", 8) == 0.0
    assert synthetic_compile_time(profile, "jit", 1) == 2.25
    assert synthetic_compile_time(profile, "jit", 8) == 4.0
    with pytest.raises(UnknownCompilerError):
        synthetic_compile_time(profile, "warp9", 1)


def test_jitter_determinism_and_bounds() -> None:
    amp = 0.05
    profile = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.001,
        jitter_amplitude=amp,
        seed=42,
        compilers={"identity": CompilerProfile(speedup=1.0)},
    )
    model = ModelSpec.from_block("conv", 16, 2)
    first = synthetic_samples(profile, "identity", 2, 50, model)
    second = synthetic_samples(profile, "identity", 2, 50, model)
    assert first == second
    assert len(set(first)) > 1  # repetitions actually vary

    base = synthetic_latency(FLAT, "identity", 2) * 2  # depth-2 model, no discount
    for sample in first:
        latency = 2 / sample
        assert base * (1 - amp) <= latency <= base * (1 + amp)

    other_seed = SyntheticProfile(
        base_latency_s=0.01,
        per_sample_cost_s=0.001,
        jitter_amplitude=amp,
        seed=43,
        compilers={"identity": CompilerProfile(speedup=1.0)},
    )
    assert synthetic_samples(other_seed, "identity", 2, 50, model) != first


def test_sample_list_shape() -> None:
    samples = synthetic_samples(DEFAULT_PROFILE, "identity", 2, 7)
    assert len(samples) == 7
    assert all(s > 0 for s in samples)
    assert all(math.isfinite(s) for s in samples)


def test_profile_document_round_trip() -> None:
    doc = DEFAULT_PROFILE.to_document()
    again = SyntheticProfile.from_document(json.loads(json.dumps(doc)))
    assert again == DEFAULT_PROFILE


def test_profile_validation() -> None:
    good = {"identity": CompilerProfile(speedup=1.0)}
    with pytest.raises(ValueError):
        SyntheticProfile(base_latency_s=0.0, per_sample_cost_s=0.0, compilers=good)
    with pytest.raises(ValueError):
        SyntheticProfile(base_latency_s=-1.0, per_sample_cost_s=0.001, compilers=good)
    with pytest.raises(ValueError):
        SyntheticProfile(base_latency_s=0.01, per_sample_cost_s=0.001, compilers=good, jitter_amplitude=1.0)
    with pytest.raises(ValueError):
        SyntheticProfile(base_latency_s=0.01, per_sample_cost_s=0.001, compilers=good, saturation_batch=0.5)
    with pytest.raises(ValueError):
        CompilerProfile(speedup=0.0)
    with pytest.raises(ValueError):
        CompilerProfile(speedup=1.0, depth_discount=1.0)
    with pytest.raises(ValueError):
        CompilerProfile(speedup=1.0, compile_time_s=-1.0)


def test_subprocess_uses_profile_file(tmp_path) -> None:
    profile = SyntheticProfile(
        base_latency_s=0.02,
        per_sample_cost_s=0.002,
        jitter_amplitude=0.01,
        seed=9,
        compilers={"identity": CompilerProfile(speedup=1.0, compile_time_s=1.25)},
    )
    path = tmp_path / "profile.json"
    path.write_text(json.dumps(profile.to_document()), encoding="utf-8")
    model = ModelSpec.from_block("mha", 16, 3, input_shape=(10, 16))

    with AdapterSession(SYNTHETIC_ARGV + ["--profile", str(path)]) as session:
        init_ok = session.init(InitRequest(model=model, compiler_id="identity", batch_size=2))
        bench_ok = session.bench(BenchRequest(repetitions=4))
        session.shutdown()

    assert init_ok.compile_time_s == 1.25
    # The subprocess round trip reproduces the pure function bit for bit.
    assert list(bench_ok.throughput_samples) == synthetic_samples(profile, "identity", 2, 4, model)
