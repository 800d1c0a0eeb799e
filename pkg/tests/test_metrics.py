"""Metric math against independent oracles and algebraic identities.

The depth fit is checked against numpy's least-squares solver, which shares
no code with the fsum-based closed form under test. Bucket pooling is checked
against a brute-force re-implementation.
"""
from __future__ import annotations

import math
import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphbench.metrics import (
    BucketOverlapError,
    BucketStats,
    DegenerateDepthsError,
    DepthPoint,
    EmptyInputError,
    InsufficientPointsError,
    MissingBatchSizeError,
    MissingUnitDepthError,
    NonPositiveThroughputError,
    ScalingSeries,
    ThroughputPoint,
    aggregate,
    ase,
    bsr,
    bucket_aggregate,
    depth_scaling_fit,
    record_key,
    rtr,
    speedup,
)
from graphbench.model import ResultRecord


def series(compiler_id: str, pairs: list[tuple[int, float]]) -> ScalingSeries:
    return ScalingSeries(
        compiler_id=compiler_id,
        points=tuple(ThroughputPoint(batch_size=b, throughput=t) for b, t in pairs),
    )


# -- aggregate ----------------------------------------------------------


def test_aggregate_fixture() -> None:
    mean, std = aggregate([90.0, 110.0])
    assert mean == 100.0
    assert std == pytest.approx(math.sqrt(200.0), abs=1e-12)


def test_aggregate_single_sample_has_zero_spread() -> None:
    assert aggregate([42.5]) == (42.5, 0.0)


def test_aggregate_matches_statistics_module() -> None:
    data = [3.0, 1.5, 2.25, 9.125, 4.0]
    mean, std = aggregate(data)
    assert mean == pytest.approx(statistics.fmean(data), abs=1e-12)
    assert std == pytest.approx(statistics.stdev(data), rel=1e-12)


def test_aggregate_empty_raises() -> None:
    with pytest.raises(EmptyInputError):
        aggregate([])


# -- speedup and series ---------------------------------------------------


def test_speedup() -> None:
    assert speedup(300.0, 100.0) == 3.0
    assert speedup(50.0, 100.0) == 0.5  # sub-unity is a finding, not an error
    with pytest.raises(NonPositiveThroughputError):
        speedup(0.0, 100.0)
    with pytest.raises(NonPositiveThroughputError):
        speedup(100.0, -1.0)


def test_series_validation() -> None:
    with pytest.raises(ValueError):
        series("c", [(1, 10.0), (1, 20.0)])
    with pytest.raises(ValueError):
        series("c", [(4, 10.0), (2, 20.0)])
    with pytest.raises(NonPositiveThroughputError):
        series("c", [(1, 0.0)])


def test_series_throughput_at_missing_batch() -> None:
    s = series("c", [(1, 10.0), (4, 30.0)])
    with pytest.raises(MissingBatchSizeError):
        s.throughput_at(2)
    with pytest.raises(MissingBatchSizeError):
        rtr(series("c", [(2, 10.0), (4, 30.0)]), 4)  # no b=1 denominator


# -- ratio metrics: fixtures ----------------------------------------------


def test_ratio_fixture() -> None:
    # T(1)=100, T(4)=320: RTR = 3.2, ASE = 0.8.
    s = series("c", [(1, 100.0), (4, 320.0)])
    assert rtr(s, 4) == pytest.approx(3.2, abs=1e-12)
    assert ase(s, 4) == pytest.approx(0.8, abs=1e-12)
    assert rtr(s, 1) == 1.0
    assert ase(s, 1) == 1.0


def test_bsr_fixture() -> None:
    compiled = series("c", [(1, 200.0), (4, 640.0)])  # ASE 0.8
    identity = series("id", [(1, 100.0), (4, 256.0)])  # ASE 0.64
    assert bsr(compiled, identity, 4) == pytest.approx(0.8 / 0.64, abs=1e-12)
    assert bsr(identity, identity, 4) == 1.0


# -- ratio metrics: algebraic properties ----------------------------------

batch_lists = st.lists(
    st.integers(min_value=2, max_value=512), min_size=1, max_size=6, unique=True
).map(lambda bs: [1] + sorted(bs))
throughputs = st.floats(min_value=1e-6, max_value=1e9, allow_nan=False, allow_infinity=False)


@st.composite
def scaling_series(draw, compiler_id: str = "c"):
    batches = draw(batch_lists)
    values = [draw(throughputs) for _ in batches]
    return series(compiler_id, list(zip(batches, values)))


@given(s=scaling_series())
def test_ase_times_batch_is_rtr(s: ScalingSeries) -> None:
    for b in s.batch_sizes:
        assert ase(s, b) * b == pytest.approx(rtr(s, b), rel=1e-12)


@given(s=scaling_series(), scale=st.floats(min_value=1e-3, max_value=1e3))
def test_ratios_scale_invariant(s: ScalingSeries, scale: float) -> None:
    scaled = series(s.compiler_id, [(p.batch_size, p.throughput * scale) for p in s.points])
    for b in s.batch_sizes:
        assert rtr(scaled, b) == pytest.approx(rtr(s, b), rel=1e-9)
        assert ase(scaled, b) == pytest.approx(ase(s, b), rel=1e-9)


@given(s=scaling_series("c"), base=scaling_series("id"))
def test_bsr_against_self_and_expansion(s: ScalingSeries, base: ScalingSeries) -> None:
    common = set(s.batch_sizes) & set(base.batch_sizes)
    for b in common:
        assert bsr(s, s, b) == pytest.approx(1.0, rel=1e-12)
        assert bsr(s, base, b) == pytest.approx(ase(s, b) / ase(base, b), rel=1e-12)


# -- depth fit -------------------------------------------------------------


def test_depth_fit_fixture() -> None:
    points = [DepthPoint(1, 2.0), DepthPoint(3, 5.0), DepthPoint(6, 8.0)]
    fit = depth_scaling_fit(points)
    assert fit.slope == pytest.approx(45.0 / 38.0, abs=1e-12)
    assert fit.retention == pytest.approx(4.0, abs=1e-12)


def test_depth_fit_constant_speedup() -> None:
    points = [DepthPoint(d, 2.5) for d in (1, 2, 4, 8)]
    fit = depth_scaling_fit(points)
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.retention == 1.0


def test_depth_fit_point_order_irrelevant() -> None:
    points = [DepthPoint(6, 8.0), DepthPoint(1, 2.0), DepthPoint(3, 5.0)]
    assert depth_scaling_fit(points).slope == pytest.approx(45.0 / 38.0, abs=1e-12)


def test_depth_fit_errors() -> None:
    with pytest.raises(InsufficientPointsError):
        depth_scaling_fit([DepthPoint(1, 2.0)])
    with pytest.raises(DegenerateDepthsError):
        depth_scaling_fit([DepthPoint(3, 2.0), DepthPoint(3, 4.0)])
    with pytest.raises(MissingUnitDepthError):
        depth_scaling_fit([DepthPoint(2, 2.0), DepthPoint(4, 4.0)])


@given(
    depths=st.lists(st.integers(min_value=2, max_value=64), min_size=1, max_size=8, unique=True),
    data=st.data(),
)
def test_depth_fit_matches_lstsq(depths: list[int], data) -> None:
    depths = [1] + sorted(depths)
    values = [
        data.draw(st.floats(min_value=0.01, max_value=100.0, allow_nan=False))
        for _ in depths
    ]
    points = [DepthPoint(d, v) for d, v in zip(depths, values)]
    fit = depth_scaling_fit(points)

    design = np.stack([np.asarray(depths, dtype=float), np.ones(len(depths))], axis=1)
    solution, *_ = np.linalg.lstsq(design, np.asarray(values, dtype=float), rcond=None)
    assert fit.slope == pytest.approx(float(solution[0]), rel=1e-9, abs=1e-9)


# -- bucket pooling --------------------------------------------------------


def make_record(
    batch: int,
    mean: float,
    cpu: float | None = None,
    compiler: str = "c",
    model: str = "m",
    device: str = "d",
) -> ResultRecord:
    return ResultRecord(
        device_id=device,
        compiler_id=compiler,
        model_key=model,
        batch_size=batch,
        throughput_mean=mean,
        throughput_std=0.0,
        cpu_mean=cpu,
        cpu_std=None if cpu is None else 0.0,
        compile_time_s=0.0,
    )


def test_bucket_means_mode_fixture() -> None:
    records = [make_record(2, 100.0), make_record(4, 200.0), make_record(8, 500.0)]
    stats = bucket_aggregate(records, [(2, 4), (8, 16)])
    assert stats[(2, 4)].throughput_mean == 150.0
    assert stats[(2, 4)].record_count == 2
    assert stats[(8, 16)].throughput_mean == 500.0
    assert stats[(8, 16)].throughput_std == 0.0


def test_bucket_samples_mode_flattens() -> None:
    records = [make_record(2, 100.0), make_record(4, 200.0)]
    samples = {record_key(records[0]): [90.0, 110.0]}
    stats = bucket_aggregate(records, [(2, 4)], samples=samples)
    # One record contributes raw samples, the other its mean.
    expected_mean, expected_std = aggregate([90.0, 110.0, 200.0])
    assert stats[(2, 4)].throughput_mean == pytest.approx(expected_mean)
    assert stats[(2, 4)].throughput_std == pytest.approx(expected_std)
    assert stats[(2, 4)].record_count == 2


def test_bucket_cpu_absent_when_no_contributor_has_cpu() -> None:
    stats = bucket_aggregate([make_record(2, 100.0), make_record(3, 120.0)], [(2, 4)])
    assert stats[(2, 4)].cpu_mean is None
    assert stats[(2, 4)].cpu_std is None


def test_bucket_cpu_pools_only_present_values() -> None:
    records = [make_record(2, 100.0, cpu=50.0), make_record(3, 120.0), make_record(4, 90.0, cpu=70.0)]
    stats = bucket_aggregate(records, [(2, 4)])
    assert stats[(2, 4)].cpu_mean == 60.0
    assert stats[(2, 4)].record_count == 3


def test_bucket_empty_and_outside() -> None:
    stats = bucket_aggregate([make_record(32, 10.0)], [(2, 4), (8, 16)])
    assert stats == {}  # record outside every bucket, both buckets empty


def test_bucket_overlap_rejected() -> None:
    with pytest.raises(BucketOverlapError):
        bucket_aggregate([], [(2, 8), (8, 16)])
    with pytest.raises(ValueError):
        bucket_aggregate([], [(4, 2)])


@given(
    batches=st.lists(st.integers(min_value=1, max_value=20), min_size=0, max_size=24),
    data=st.data(),
)
def test_bucket_means_mode_matches_bruteforce(batches: list[int], data) -> None:
    records = [
        make_record(b, data.draw(st.floats(min_value=0.1, max_value=1e4)), model=f"m{i}")
        for i, b in enumerate(batches)
    ]
    buckets = [(1, 4), (5, 9), (10, 20)]
    stats = bucket_aggregate(records, buckets)

    for low, high in buckets:
        pool = [r.throughput_mean for r in records if low <= r.batch_size <= high]
        if not pool:
            assert (low, high) not in stats
            continue
        expected_mean, expected_std = aggregate(pool)
        got: BucketStats = stats[(low, high)]
        assert got.record_count == len(pool)
        assert got.throughput_mean == pytest.approx(expected_mean, rel=1e-12)
        assert got.throughput_std == pytest.approx(expected_std, rel=1e-12)
