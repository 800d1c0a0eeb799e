"""Command-line entry point.

Subcommands::

    graphbench validate --plan plan.yaml
    graphbench run      --plan plan.yaml --out-dir results/
    graphbench resume   --plan plan.yaml --out-dir results/
    graphbench agent    --listen 0.0.0.0:7070 --state-dir /var/lib/gb \\
                        --adapters-manifest adapters.json
    graphbench analyze  --archive results/demo.archive.json [--metrics ...]
    graphbench report   --archive results/demo.archive.json --out-dir report/

Exit codes: 0 success; 2 the plan failed validation; 3 a plan/archive file
could not be read or decoded; 4 the run finished with a partial failure
manifest; 5 no device was reachable. The agent's state directory defaults
to the GRAPHBENCH_STATE_DIR environment variable when the flag is omitted.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .agent import AgentServer, load_adapters_manifest
from .analysis import (
    DEFAULT_BUCKETS,
    DEFAULT_METRICS,
    AnalysisError,
    analyze,
    ase_grid,
    write_report,
)
from .archive import ArchiveFormatError, ArchiveVersionError, ResultsArchive, load_archive, save_archive
from .config import PlanSyntaxError, PlanVersionError, parse_plan
from .coordinator import NoDevicesReachableError, run_plan
from .model import ExperimentPlan, PlanValidationError, validate_plan

EXIT_OK = 0
EXIT_INVALID_PLAN = 2
EXIT_UNREADABLE = 3
EXIT_PARTIAL = 4
EXIT_UNREACHABLE = 5

log = logging.getLogger("graphbench")


def _load_plan_or_exit(path: str | None) -> ExperimentPlan:
    if not path:
        print("error: --plan is required for this command", file=sys.stderr)
        raise SystemExit(EXIT_UNREADABLE)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read plan file: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_UNREADABLE)
    try:
        return parse_plan(text)
    except (PlanSyntaxError, PlanVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_PLAN)
    except PlanValidationError as exc:
        for field_path, message in exc.violations:
            print(f"invalid: {field_path}: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_PLAN)


def _load_archive_or_exit(path: str | None) -> ResultsArchive:
    if not path:
        print("error: --archive is required for this command", file=sys.stderr)
        raise SystemExit(EXIT_UNREADABLE)
    try:
        return load_archive(path)
    except FileNotFoundError:
        print(f"error: archive not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_UNREADABLE)
    except (ArchiveFormatError, ArchiveVersionError, PlanValidationError, PlanVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_UNREADABLE)


def _parse_buckets(text: str) -> tuple[tuple[int, int], ...]:
    """Parse "2-4,8-16" into ((2, 4), (8, 16))."""
    buckets = []
    for part in text.split(","):
        low, sep, high = part.strip().partition("-")
        if not sep:
            raise argparse.ArgumentTypeError(f"bucket {part!r} must look like LOW-HIGH")
        buckets.append((int(low), int(high)))
    return tuple(buckets)


def cmd_validate(args: argparse.Namespace) -> int:
    plan = _load_plan_or_exit(args.plan)
    problems = validate_plan(plan, require_unit_batch=args.require_unit_batch)
    if problems:
        for field_path, message in problems:
            print(f"invalid: {field_path}: {message}", file=sys.stderr)
        return EXIT_INVALID_PLAN
    print(f"plan {plan.plan_id!r} is valid")
    return EXIT_OK


def _run_or_resume(args: argparse.Namespace) -> int:
    plan = _load_plan_or_exit(args.plan)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)  # journal opens before the archive is saved
    journal = args.journal or str(out_dir / f"{plan.plan_id}.journal.jsonl")
    try:
        result = run_plan(
            plan,
            journal_path=journal,
            dial_timeout_s=args.dial_timeout,
            io_timeout_s=args.io_timeout,
        )
    except NoDevicesReachableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    archive = ResultsArchive.new(plan, result.records, result.failures)
    suffix = ".archive.json.gz" if args.gzip else ".archive.json"
    archive_path = out_dir / f"{plan.plan_id}{suffix}"
    save_archive(archive, archive_path)
    print(f"archive written: {archive_path}")
    print(f"records: {len(result.records)}, failures: {len(result.failures)}")
    for device_id, state in sorted(result.device_states.items()):
        cause = result.device_causes.get(device_id)
        print(f"device {device_id}: {state}" + (f" ({cause})" if cause else ""))
    return EXIT_OK if result.complete else EXIT_PARTIAL


def cmd_run(args: argparse.Namespace) -> int:
    return _run_or_resume(args)


def cmd_resume(args: argparse.Namespace) -> int:
    # Agents hold the durable state; re-deploying the same plan resumes
    # from their checkpoints and re-uploads idempotently.
    return _run_or_resume(args)


def cmd_agent(args: argparse.Namespace) -> int:
    state_dir = args.state_dir or os.environ.get("GRAPHBENCH_STATE_DIR")
    if not state_dir:
        print(
            "error: provide --state-dir or set GRAPHBENCH_STATE_DIR",
            file=sys.stderr,
        )
        return EXIT_UNREADABLE
    try:
        manifest = load_adapters_manifest(args.adapters_manifest)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load adapters manifest: {exc}", file=sys.stderr)
        return EXIT_UNREADABLE
    server = AgentServer(args.listen, state_dir, manifest)
    server.start()
    print(f"agent listening on {server.address} (state: {state_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    archive = _load_archive_or_exit(args.archive)
    try:
        if args.ase_grid:
            device_id, compiler_id, kind, depth = args.ase_grid
            table = ase_grid(archive, device_id, compiler_id, kind, int(depth))
            sys.stdout.write(f"# {table.name}\n" + table.to_csv())
            return EXIT_OK
        metrics = tuple(args.metrics.split(",")) if args.metrics else DEFAULT_METRICS
        tables = analyze(archive, metrics=metrics, buckets=args.buckets)
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, table in tables.items():
        sys.stdout.write(f"# {name}\n" + table.to_csv() + "\n")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    archive = _load_archive_or_exit(args.archive)
    formats = tuple(args.format.split(","))
    try:
        metrics = tuple(args.metrics.split(",")) if args.metrics else DEFAULT_METRICS
        written = write_report(
            archive,
            args.out_dir or "report",
            formats,
            metrics=metrics,
            buckets=args.buckets,
        )
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphbench",
        description="Distributed benchmark orchestration for neural network graph compilers",
    )
    parser.add_argument("--log-level", default="warning", help="logging level (debug, info, warning, error)")
    parser.add_argument("--plan", help="experiment plan YAML file")
    parser.add_argument("--archive", help="results archive JSON (optionally .json.gz)")
    parser.add_argument("--out-dir", help="output directory for archives and reports")

    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a plan file and exit")
    p_validate.add_argument(
        "--require-unit-batch",
        action="store_true",
        help="additionally require batch size 1 (needed by RTR/ASE/BSR)",
    )
    p_validate.set_defaults(func=cmd_validate)

    for name, fn, blurb in (
        ("run", cmd_run, "deploy a plan to its agents and collect results"),
        ("resume", cmd_resume, "re-deploy a plan; agents resume from checkpoints"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--journal", help="session journal path (default: <out-dir>/<plan_id>.journal.jsonl)")
        p.add_argument("--gzip", action="store_true", help="write the archive gzip-compressed")
        p.add_argument("--dial-timeout", type=float, default=10.0, help="seconds to wait for an agent connection")
        p.add_argument("--io-timeout", type=float, default=24 * 3600.0, help="seconds to wait for agent messages")
        p.set_defaults(func=fn)

    p_agent = sub.add_parser("agent", help="run the device agent daemon")
    p_agent.add_argument("--listen", default="0.0.0.0:7070", help="host:port to listen on")
    p_agent.add_argument("--state-dir", help="checkpoint directory (default: $GRAPHBENCH_STATE_DIR)")
    p_agent.add_argument("--adapters-manifest", required=True, help="JSON file mapping compiler_id to spawn argv")
    p_agent.set_defaults(func=cmd_agent)

    p_analyze = sub.add_parser("analyze", help="print metric tables from an archive as CSV")
    p_analyze.add_argument("--metrics", help=f"comma list (default: {','.join(DEFAULT_METRICS)})")
    p_analyze.add_argument("--buckets", type=_parse_buckets, default=DEFAULT_BUCKETS, help="batch buckets, e.g. 2-4,8-16")
    p_analyze.add_argument(
        "--ase-grid",
        nargs=4,
        metavar=("DEVICE", "COMPILER", "KIND", "DEPTH"),
        help="print the width-by-batch ASE grid for one device/compiler/block kind/depth",
    )
    p_analyze.set_defaults(func=cmd_analyze)

    p_report = sub.add_parser("report", help="write report files from an archive")
    p_report.add_argument("--format", default="csv", help="comma list of csv,json,svg")
    p_report.add_argument("--metrics", help=f"comma list (default: {','.join(DEFAULT_METRICS)})")
    p_report.add_argument("--buckets", type=_parse_buckets, default=DEFAULT_BUCKETS, help="batch buckets, e.g. 2-4,8-16")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except SystemExit as exc:  # loader helpers bail out with a specific code
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
