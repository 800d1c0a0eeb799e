"""Throughput aggregation and scaling metrics.

Definitions, for a compiler c with mean throughput T_c(b) at batch size b:

* relative throughput ratio   RTR_c(b) = T_c(b) / T_c(1)
* amortized scaling efficiency ASE_c(b) = T_c(b) / (b * T_c(1))
* batch scaling ratio         BSR_c(b) = ASE_c(b) / ASE_identity(b)

RTR answers "how much faster did the deployment get", ASE answers "how close
to perfect linear scaling is it" (1 = perfect), and BSR compares a compiler's
scaling curve against the uncompiled identity baseline on the same device.
ASE(b) * b == RTR(b) by construction, and all three are invariant under
rescaling a series by a positive constant.

Depth scaling fits an unweighted least-squares line through (depth, speedup)
points and reports its slope together with retention, the ratio of the
deepest stack's speedup to the single-block speedup.

Sub-unity ratios (a compiler losing to its own b=1 throughput, or scaling
worse than the identity baseline) are legitimate findings, so nothing here
treats them as errors; flagging is left to the reporting layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import ResultRecord


class EmptyInputError(ValueError):
    """An aggregate was requested over zero samples."""


class NonPositiveThroughputError(ValueError):
    """Throughput values must be strictly positive for ratio metrics."""


class MissingBatchSizeError(LookupError):
    """A series lacks a batch size the requested metric needs."""


class InsufficientPointsError(ValueError):
    """A depth fit needs at least two points."""


class MissingUnitDepthError(LookupError):
    """Retention needs a depth-1 point as its denominator."""


class DegenerateDepthsError(ValueError):
    """All depths coincide, so the fit's slope is undefined."""


class BucketOverlapError(ValueError):
    """Bucket ranges must not overlap."""


def aggregate(samples: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation (ddof=1) of ``samples``.

    A single sample has zero spread by convention. Raises EmptyInputError on
    an empty sequence.
    """
    if len(samples) == 0:
        raise EmptyInputError("cannot aggregate zero samples")
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    std = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    return mean, std


def speedup(throughput_compiled: float, throughput_identity: float) -> float:
    """Ratio of compiled to identity throughput at one (model, batch) point."""
    if throughput_compiled <= 0 or throughput_identity <= 0:
        raise NonPositiveThroughputError(
            f"throughputs must be > 0, got {throughput_compiled} / {throughput_identity}"
        )
    return throughput_compiled / throughput_identity


@dataclass(frozen=True)
class ThroughputPoint:
    batch_size: int
    throughput: float


@dataclass(frozen=True)
class ScalingSeries:
    """Mean throughput of one compiler on one (device, model) across batches.

    Batch sizes must be strictly increasing and throughputs strictly
    positive. The ratio metrics additionally need a b=1 point; they raise
    MissingBatchSizeError when it is absent.
    """

    compiler_id: str
    points: tuple[ThroughputPoint, ...]

    def __post_init__(self) -> None:
        batches = [p.batch_size for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(batches, batches[1:])):
            raise ValueError("batch sizes must be strictly increasing")
        for p in self.points:
            if p.throughput <= 0:
                raise NonPositiveThroughputError(
                    f"throughput at b={p.batch_size} must be > 0, got {p.throughput}"
                )

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(p.batch_size for p in self.points)

    def throughput_at(self, batch_size: int) -> float:
        for p in self.points:
            if p.batch_size == batch_size:
                return p.throughput
        raise MissingBatchSizeError(
            f"series for {self.compiler_id!r} has no batch size {batch_size}"
        )


def rtr(series: ScalingSeries, batch_size: int) -> float:
    """Relative throughput ratio T(b) / T(1)."""
    return series.throughput_at(batch_size) / series.throughput_at(1)


def ase(series: ScalingSeries, batch_size: int) -> float:
    """Amortized scaling efficiency T(b) / (b * T(1)); 1 is perfect scaling."""
    return series.throughput_at(batch_size) / (batch_size * series.throughput_at(1))


def bsr(series: ScalingSeries, identity_series: ScalingSeries, batch_size: int) -> float:
    """Batch scaling ratio: this compiler's ASE over the identity baseline's."""
    return ase(series, batch_size) / ase(identity_series, batch_size)


@dataclass(frozen=True)
class DepthPoint:
    depth: int
    speedup: float


@dataclass(frozen=True)
class DepthScalingFit:
    """Least-squares slope of speedup over depth, plus deep/shallow retention."""

    slope: float
    retention: float


def depth_scaling_fit(points: Sequence[DepthPoint]) -> DepthScalingFit:
    """Fit speedup-vs-depth with unweighted ordinary least squares.

    slope = sum((x - mean(x)) * (y - mean(y))) / sum((x - mean(x))^2)
    retention = speedup at the maximum depth / speedup at depth 1

    Requires at least two points with distinct depths and a depth-1 point.
    """
    if len(points) < 2:
        raise InsufficientPointsError(f"need >= 2 depth points, got {len(points)}")
    xs = [float(p.depth) for p in points]
    ys = [float(p.speedup) for p in points]
    x_mean = math.fsum(xs) / len(xs)
    y_mean = math.fsum(ys) / len(ys)
    sxx = math.fsum((x - x_mean) ** 2 for x in xs)
    if sxx == 0.0:
        raise DegenerateDepthsError("all depths are equal; slope is undefined")
    sxy = math.fsum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    slope = sxy / sxx

    by_depth = {p.depth: p.speedup for p in points}
    if 1 not in by_depth:
        raise MissingUnitDepthError("retention needs a depth-1 point")
    retention = by_depth[max(by_depth)] / by_depth[1]
    return DepthScalingFit(slope=slope, retention=retention)


@dataclass(frozen=True)
class BucketStats:
    """Pooled stats for one inclusive batch-size range."""

    low: int
    high: int
    record_count: int
    throughput_mean: float
    throughput_std: float
    cpu_mean: float | None
    cpu_std: float | None


SampleKey = tuple[str, str, str, int]  # (device_id, compiler_id, model_key, batch_size)


def record_key(record: ResultRecord) -> SampleKey:
    return (record.device_id, record.compiler_id, record.model_key, record.batch_size)


def bucket_aggregate(
    records: Iterable[ResultRecord],
    buckets: Sequence[tuple[int, int]],
    *,
    samples: Mapping[SampleKey, Sequence[float]] | None = None,
    cpu_samples: Mapping[SampleKey, Sequence[float]] | None = None,
) -> dict[tuple[int, int], BucketStats]:
    """Pool records whose batch size falls inside each inclusive range.

    Two pooling modes, selected by whether raw samples are supplied:

    * means mode (default): each record contributes its repetition mean once,
      all records weighted equally.
    * samples mode: when ``samples`` maps a record's (device, compiler,
      model key, batch) to its per-repetition throughput samples, the raw
      samples are flattened into the pool instead.

    CPU pooling mirrors throughput pooling; records without CPU stats are
    skipped, and a bucket whose contributors all lack CPU data reports its
    CPU fields as absent. Buckets that match no record are omitted from the
    result. Overlapping bucket ranges raise BucketOverlapError; a record
    outside every bucket is ignored.
    """
    ordered = sorted(buckets)
    for (lo1, hi1), (lo2, hi2) in zip(ordered, ordered[1:]):
        if hi1 >= lo2:
            raise BucketOverlapError(f"buckets {lo1}-{hi1} and {lo2}-{hi2} overlap")
    for lo, hi in ordered:
        if lo > hi:
            raise ValueError(f"bucket {lo}-{hi} has low > high")

    pools: dict[tuple[int, int], list[float]] = {b: [] for b in buckets}
    cpu_pools: dict[tuple[int, int], list[float]] = {b: [] for b in buckets}
    counts: dict[tuple[int, int], int] = {b: 0 for b in buckets}

    for record in records:
        bucket = next((b for b in buckets if b[0] <= record.batch_size <= b[1]), None)
        if bucket is None:
            continue
        counts[bucket] += 1
        key = record_key(record)
        if samples is not None and key in samples:
            pools[bucket].extend(float(s) for s in samples[key])
        else:
            pools[bucket].append(record.throughput_mean)
        if cpu_samples is not None and key in cpu_samples:
            cpu_pools[bucket].extend(float(s) for s in cpu_samples[key])
        elif record.cpu_mean is not None:
            cpu_pools[bucket].append(record.cpu_mean)

    out: dict[tuple[int, int], BucketStats] = {}
    for bucket in buckets:
        if not pools[bucket]:
            continue
        t_mean, t_std = aggregate(pools[bucket])
        if cpu_pools[bucket]:
            c_mean, c_std = aggregate(cpu_pools[bucket])
            cpu_mean: float | None = c_mean
            cpu_std: float | None = c_std
        else:
            cpu_mean = cpu_std = None
        out[bucket] = BucketStats(
            low=bucket[0],
            high=bucket[1],
            record_count=counts[bucket],
            throughput_mean=t_mean,
            throughput_std=t_std,
            cpu_mean=cpu_mean,
            cpu_std=cpu_std,
        )
    return out
