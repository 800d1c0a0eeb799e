"""Turn a results archive into tables, long-format series, and charts.

Analysis is a pure function of the archive plus flags: row orders are fully
sorted, floats use fixed formatting (two decimals for throughput, CPU, and
compile seconds; four significant digits for ratio metrics, matching the
precision speedups are usually quoted at), and nothing volatile (timestamps,
hostnames) leaks in, so identical archives produce byte-identical outputs.

Ratio metrics below 1.0 (a compiled path losing to the b=1 point, or to the
identity baseline) are legitimate findings: they get a ``below_unity``
annotation column, never an error.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .archive import ResultsArchive
from .metrics import (
    ScalingSeries,
    ThroughputPoint,
    DepthPoint,
    bucket_aggregate,
    depth_scaling_fit,
    speedup,
)
from .model import ResultRecord

DEFAULT_BUCKETS: tuple[tuple[int, int], ...] = ((2, 4), (8, 16))
DEFAULT_METRICS = (
    "throughput",
    "speedup",
    "rtr",
    "ase",
    "bsr",
    "depth",
    "compile_time",
    "cpu",
    "buckets",
)

_BLOCK_KEY_RE = re.compile(r"^block:(?P<kind>conv|mha):w(?P<width>\d+):d(?P<depth>\d+)$")


class AnalysisError(ValueError):
    pass


class MissingBaselineError(AnalysisError):
    """A ratio against the identity baseline was requested but no identity
    record exists for the (device, model, batch) coordinates."""


class MissingUnitBatchError(AnalysisError):
    """A batch-scaling ratio was requested but the series has no b=1 point."""


class UnknownMetricError(AnalysisError):
    pass


def fmt2(value: float | None) -> str:
    """Two-decimal fixed formatting; absent values render empty."""
    return "" if value is None else f"{value:.2f}"


def fmt4(value: float) -> str:
    """Four significant digits."""
    return f"{value:.4g}"


def model_family(model_key: str) -> str:
    """Grouping family: catalog name up to the first dash, or the block kind."""
    m = _BLOCK_KEY_RE.match(model_key)
    if m:
        return f"block:{m.group('kind')}"
    return model_key.split("-", 1)[0]


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_document(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


def _by_coords(records: Iterable[ResultRecord]) -> dict[tuple[str, str, str, int], ResultRecord]:
    return {(r.device_id, r.compiler_id, r.model_key, r.batch_size): r for r in records}


def _series_for(
    records: Sequence[ResultRecord],
) -> dict[tuple[str, str, str], ScalingSeries]:
    """One throughput-vs-batch series per (device, compiler, model)."""
    grouped: dict[tuple[str, str, str], list[ResultRecord]] = {}
    for r in records:
        grouped.setdefault((r.device_id, r.compiler_id, r.model_key), []).append(r)
    out = {}
    for key, rs in grouped.items():
        rs.sort(key=lambda r: r.batch_size)
        out[key] = ScalingSeries(
            compiler_id=key[1],
            points=tuple(ThroughputPoint(r.batch_size, r.throughput_mean) for r in rs),
        )
    return out


def _require_unit_batch(series: ScalingSeries, key: tuple[str, str, str]) -> None:
    if 1 not in series.batch_sizes:
        raise MissingUnitBatchError(
            f"series for device={key[0]} compiler={key[1]} model={key[2]} has no batch size 1"
        )


def _identity_id(archive: ResultsArchive) -> str:
    return archive.plan.identity_compiler_id()


def throughput_table(archive: ResultsArchive) -> Table:
    rows = [
        (r.device_id, r.compiler_id, r.model_key, str(r.batch_size), fmt2(r.throughput_mean), fmt2(r.throughput_std))
        for r in sorted(archive.records, key=lambda r: (r.device_id, r.compiler_id, r.model_key, r.batch_size))
    ]
    return Table(
        name="throughput",
        columns=("device", "compiler", "model", "batch", "throughput_mean", "throughput_std"),
        rows=tuple(rows),
    )


def compile_time_table(archive: ResultsArchive) -> Table:
    rows = [
        (r.device_id, r.compiler_id, r.model_key, str(r.batch_size), fmt2(r.compile_time_s))
        for r in sorted(archive.records, key=lambda r: (r.device_id, r.compiler_id, r.model_key, r.batch_size))
    ]
    return Table(
        name="compile_time",
        columns=("device", "compiler", "model", "batch", "compile_time_s"),
        rows=tuple(rows),
    )


def cpu_table(archive: ResultsArchive) -> Table:
    rows = [
        (r.device_id, r.compiler_id, r.model_key, str(r.batch_size), fmt2(r.cpu_mean), fmt2(r.cpu_std))
        for r in sorted(archive.records, key=lambda r: (r.device_id, r.compiler_id, r.model_key, r.batch_size))
    ]
    return Table(
        name="cpu",
        columns=("device", "compiler", "model", "batch", "cpu_mean", "cpu_std"),
        rows=tuple(rows),
    )


def speedup_table(archive: ResultsArchive) -> Table:
    identity = _identity_id(archive)
    index = _by_coords(archive.records)
    rows = []
    for r in sorted(archive.records, key=lambda r: (r.device_id, r.model_key, r.batch_size, r.compiler_id)):
        if r.compiler_id == identity:
            continue
        base = index.get((r.device_id, identity, r.model_key, r.batch_size))
        if base is None:
            raise MissingBaselineError(
                f"no identity run for device={r.device_id} model={r.model_key} batch={r.batch_size}"
            )
        value = speedup(r.throughput_mean, base.throughput_mean)
        rows.append(
            (r.device_id, r.compiler_id, r.model_key, str(r.batch_size), fmt4(value))
        )
    return Table(
        name="speedup",
        columns=("device", "compiler", "model", "batch", "speedup"),
        rows=tuple(rows),
    )


def _ratio_table(archive: ResultsArchive, which: str) -> Table:
    """Shared builder for the rtr and ase tables."""
    series_index = _series_for(list(archive.records))
    rows = []
    for key in sorted(series_index):
        series = series_index[key]
        _require_unit_batch(series, key)
        t1 = series.throughput_at(1)
        for point in series.points:
            ratio = point.throughput / t1
            if which == "ase":
                value = ratio / point.batch_size
                rows.append((*key, str(point.batch_size), fmt4(value)))
            else:
                flag = "yes" if ratio < 1.0 else ""
                rows.append((*key, str(point.batch_size), fmt4(ratio), flag))
    columns = ("device", "compiler", "model", "batch", which)
    if which == "rtr":
        columns = columns + ("below_unity",)
    return Table(name=which, columns=columns, rows=tuple(rows))


def rtr_table(archive: ResultsArchive) -> Table:
    return _ratio_table(archive, "rtr")


def ase_table(archive: ResultsArchive) -> Table:
    return _ratio_table(archive, "ase")


def bsr_table(archive: ResultsArchive) -> Table:
    identity = _identity_id(archive)
    series_index = _series_for(list(archive.records))
    rows = []
    for key in sorted(series_index):
        device_id, compiler_id, model_key = key
        if compiler_id == identity:
            continue
        base_key = (device_id, identity, model_key)
        base = series_index.get(base_key)
        if base is None:
            raise MissingBaselineError(
                f"no identity series for device={device_id} model={model_key}"
            )
        series = series_index[key]
        _require_unit_batch(series, key)
        _require_unit_batch(base, base_key)
        for point in series.points:
            b = point.batch_size
            if b not in base.batch_sizes:
                raise MissingBaselineError(
                    f"identity series for device={device_id} model={model_key} has no batch {b}"
                )
            ase_c = point.throughput / (b * series.throughput_at(1))
            ase_id = base.throughput_at(b) / (b * base.throughput_at(1))
            value = ase_c / ase_id
            rows.append(
                (device_id, compiler_id, model_key, str(b), fmt4(value), "yes" if value < 1.0 else "")
            )
    return Table(
        name="bsr",
        columns=("device", "compiler", "model", "batch", "bsr", "below_unity"),
        rows=tuple(rows),
    )


def depth_table(archive: ResultsArchive) -> Table:
    """Depth-scaling fits per (device, compiler, kind, width, batch).

    Uses speedup over the identity baseline at each stack depth; emitted
    only for groups with at least two depths (including depth 1, the
    retention denominator). Archives without depth-varying stacks yield an
    empty table.
    """
    identity = _identity_id(archive)
    index = _by_coords(archive.records)
    groups: dict[tuple[str, str, str, int, int], dict[int, ResultRecord]] = {}
    for r in archive.records:
        m = _BLOCK_KEY_RE.match(r.model_key)
        if m is None or r.compiler_id == identity:
            continue
        key = (r.device_id, r.compiler_id, m.group("kind"), int(m.group("width")), r.batch_size)
        groups.setdefault(key, {})[int(m.group("depth"))] = r

    rows = []
    for key in sorted(groups):
        device_id, compiler_id, kind, width, batch = key
        by_depth = groups[key]
        if len(by_depth) < 2:
            continue
        points = []
        for depth in sorted(by_depth):
            r = by_depth[depth]
            base = index.get((device_id, identity, r.model_key, batch))
            if base is None:
                raise MissingBaselineError(
                    f"no identity run for device={device_id} model={r.model_key} batch={batch}"
                )
            points.append(DepthPoint(depth=depth, speedup=speedup(r.throughput_mean, base.throughput_mean)))
        fit = depth_scaling_fit(points)
        rows.append(
            (
                device_id,
                compiler_id,
                kind,
                str(width),
                str(batch),
                str(len(points)),
                fmt4(fit.slope),
                fmt4(fit.retention),
            )
        )
    return Table(
        name="depth",
        columns=("device", "compiler", "kind", "width", "batch", "depths", "slope", "retention"),
        rows=tuple(rows),
    )


def buckets_table(archive: ResultsArchive, buckets: Sequence[tuple[int, int]] = DEFAULT_BUCKETS) -> Table:
    """Batch-bucket pooling per (device, compiler, model family)."""
    grouped: dict[tuple[str, str, str], list[ResultRecord]] = {}
    for r in archive.records:
        grouped.setdefault((r.device_id, r.compiler_id, model_family(r.model_key)), []).append(r)
    rows = []
    for key in sorted(grouped):
        stats = bucket_aggregate(grouped[key], list(buckets))
        for bucket in sorted(stats):
            s = stats[bucket]
            rows.append(
                (
                    *key,
                    f"{s.low}-{s.high}",
                    str(s.record_count),
                    fmt2(s.throughput_mean),
                    fmt2(s.throughput_std),
                    fmt2(s.cpu_mean),
                    fmt2(s.cpu_std),
                )
            )
    return Table(
        name="buckets",
        columns=(
            "device",
            "compiler",
            "family",
            "bucket",
            "records",
            "throughput_mean",
            "throughput_std",
            "cpu_mean",
            "cpu_std",
        ),
        rows=tuple(rows),
    )


def ase_grid(archive: ResultsArchive, device_id: str, compiler_id: str, kind: str, depth: int) -> Table:
    """Wide-format ASE grid: one row per stack width, one column per batch."""
    rows_by_width: dict[int, dict[int, float]] = {}
    batches: set[int] = set()
    for r in archive.records:
        m = _BLOCK_KEY_RE.match(r.model_key)
        if (
            m is None
            or r.device_id != device_id
            or r.compiler_id != compiler_id
            or m.group("kind") != kind
            or int(m.group("depth")) != depth
        ):
            continue
        rows_by_width.setdefault(int(m.group("width")), {})[r.batch_size] = r.throughput_mean
        batches.add(r.batch_size)

    ordered_batches = sorted(batches)
    rows = []
    for width in sorted(rows_by_width):
        by_batch = rows_by_width[width]
        if 1 not in by_batch:
            raise MissingUnitBatchError(
                f"width {width} grid row has no batch size 1 for ASE"
            )
        cells = [str(width)]
        for b in ordered_batches:
            if b in by_batch:
                cells.append(fmt4(by_batch[b] / (b * by_batch[1])))
            else:
                cells.append("")
        rows.append(tuple(cells))
    return Table(
        name="ase_grid",
        columns=("width", *(f"b{b}" for b in ordered_batches)),
        rows=tuple(rows),
    )


_METRIC_BUILDERS = {
    "throughput": throughput_table,
    "speedup": speedup_table,
    "rtr": rtr_table,
    "ase": ase_table,
    "bsr": bsr_table,
    "depth": depth_table,
    "compile_time": compile_time_table,
    "cpu": cpu_table,
}


def analyze(
    archive: ResultsArchive,
    metrics: Sequence[str] = DEFAULT_METRICS,
    *,
    buckets: Sequence[tuple[int, int]] = DEFAULT_BUCKETS,
) -> dict[str, Table]:
    """Build the requested metric tables, keyed by metric name, in order."""
    tables: dict[str, Table] = {}
    for metric in metrics:
        if metric == "buckets":
            tables[metric] = buckets_table(archive, buckets)
        elif metric in _METRIC_BUILDERS:
            tables[metric] = _METRIC_BUILDERS[metric](archive)
        else:
            raise UnknownMetricError(
                f"unknown metric {metric!r}; known: {', '.join((*_METRIC_BUILDERS, 'buckets'))}"
            )
    return tables


def series_long_table(archive: ResultsArchive) -> Table:
    """Long-format batch-scaling series for external plotting tools."""
    rows = []
    tables = analyze(archive, metrics=("throughput", "rtr", "ase", "bsr"))
    for metric in ("throughput", "rtr", "ase", "bsr"):
        table = tables[metric]
        value_col = table.columns.index(
            "throughput_mean" if metric == "throughput" else metric
        )
        for row in table.rows:
            rows.append((metric, row[0], row[1], row[2], row[3], row[value_col]))
    return Table(
        name="series",
        columns=("metric", "device", "compiler", "model", "batch", "value"),
        rows=tuple(rows),
    )


# -- SVG rendering ------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def render_line_chart(
    title: str,
    x_label: str,
    y_label: str,
    series: Sequence[tuple[str, Sequence[tuple[float, float]]]],
    *,
    width: int = 760,
    height: int = 460,
) -> str:
    """A dependency-free SVG line chart; output is deterministic."""
    margin_l, margin_r, margin_t, margin_b = 64, 16, 40, 48
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    points = [p for _, pts in series for p in pts]
    xs = [p[0] for p in points] or [0.0, 1.0]
    ys = [p[1] for p in points] or [0.0, 1.0]
    x_min, x_max = min(xs), max(xs)
    y_min, y_max = min(ys), max(ys)
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0
    y_pad = (y_max - y_min) * 0.05
    y_min, y_max = y_min - y_pad, y_max + y_pad

    def sx(x: float) -> float:
        return margin_l + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y: float) -> float:
        return margin_t + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#888"/>',
    ]
    ticks = 5
    for i in range(ticks):
        fx = x_min + (x_max - x_min) * i / (ticks - 1)
        fy = y_min + (y_max - y_min) * i / (ticks - 1)
        px, py = sx(fx), sy(fy)
        parts.append(
            f'<line x1="{px:.1f}" y1="{margin_t + plot_h}" x2="{px:.1f}" '
            f'y2="{margin_t + plot_h + 5}" stroke="#888"/>'
        )
        parts.append(
            f'<text x="{px:.1f}" y="{margin_t + plot_h + 18}" text-anchor="middle">{fx:.2f}</text>'
        )
        parts.append(
            f'<line x1="{margin_l - 5}" y1="{py:.1f}" x2="{margin_l}" y2="{py:.1f}" stroke="#888"/>'
        )
        parts.append(
            f'<text x="{margin_l - 8}" y="{py + 4:.1f}" text-anchor="end">{fy:.2f}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 8}" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {margin_t + plot_h / 2:.1f})">{y_label}</text>'
    )
    for idx, (label, pts) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{color}"/>')
        ly = margin_t + 14 + idx * 16
        parts.append(f'<line x1="{margin_l + 8}" y1="{ly - 4}" x2="{margin_l + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{margin_l + 34}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _scaling_chart(archive: ResultsArchive, metric: str) -> str:
    table = analyze(archive, metrics=(metric,))[metric]
    value_col = table.columns.index(metric)
    series_map: dict[str, list[tuple[float, float]]] = {}
    for row in table.rows:
        label = f"{row[0]}/{row[1]}/{row[2]}"
        series_map.setdefault(label, []).append((float(row[3]), float(row[value_col])))
    series = [(label, sorted(pts)) for label, pts in sorted(series_map.items())]
    return render_line_chart(
        f"{metric.upper()} vs batch size", "batch size", metric.upper(), series
    )


def write_report(
    archive: ResultsArchive,
    out_dir: str | Path,
    formats: Sequence[str] = ("csv",),
    *,
    metrics: Sequence[str] = DEFAULT_METRICS,
    buckets: Sequence[tuple[int, int]] = DEFAULT_BUCKETS,
) -> list[Path]:
    """Write report files; returns the paths written (sorted)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    tables = analyze(archive, metrics=metrics, buckets=buckets)
    if "csv" in formats:
        for name, table in tables.items():
            path = out / f"{name}.csv"
            path.write_text(table.to_csv(), encoding="utf-8")
            written.append(path)
        series_path = out / "series.csv"
        series_path.write_text(series_long_table(archive).to_csv(), encoding="utf-8")
        written.append(series_path)
    if "json" in formats:
        doc = {"plan_id": archive.plan.plan_id, "tables": {n: t.to_document() for n, t in tables.items()}}
        path = out / "report.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "svg" in formats:
        for metric in ("rtr", "ase"):
            path = out / f"{metric}.svg"
            path.write_text(_scaling_chart(archive, metric), encoding="utf-8")
            written.append(path)
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise AnalysisError(f"unknown report formats: {sorted(unknown)}")
    return sorted(written)
