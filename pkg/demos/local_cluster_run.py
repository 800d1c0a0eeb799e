"""Run a full benchmark sweep against two local agents and write a report.

Everything happens on 127.0.0.1 with the bundled synthetic backend standing in
for real compilers, so this runs anywhere in a few seconds.

Run: python demos/local_cluster_run.py
"""
import json
import sys
import tempfile
from pathlib import Path

from graphbench.agent import AgentServer
from graphbench.archive import ResultsArchive, save_archive
from graphbench.analysis import write_report
from graphbench.coordinator import run_plan
from graphbench.model import CompilerSpec, DeviceSpec, ExperimentPlan, ModelSpec
from graphbench.synthetic import CompilerProfile, SyntheticProfile

work = Path(tempfile.mkdtemp(prefix="graphbench-demo-"))

# The synthetic backend simulates a device from a latency profile: "turbo"
# runs 2x faster than the uncompiled baseline but pays a 3s compile.
profile = SyntheticProfile(
    base_latency_s=0.01,
    per_sample_cost_s=0.001,
    saturation_batch=8,
    jitter_amplitude=0.02,
    seed=11,
    compilers={
        "identity": CompilerProfile(speedup=1.0),
        "turbo": CompilerProfile(speedup=2.0, compile_time_s=3.0, depth_discount=0.4),
    },
)
profile_path = work / "profile.json"
profile_path.write_text(json.dumps(profile.to_document()))

adapter_argv = [sys.executable, "-m", "graphbench.synthetic", "--profile", str(profile_path)]
manifest = {"identity": adapter_argv, "turbo": adapter_argv}

# Two agents, as if two machines. Port 0 lets the OS pick.
agents = {}
servers = []
for device_id in ("node-a", "node-b"):
    server = AgentServer("127.0.0.1:0", work / f"state-{device_id}", manifest)
    server.start()
    servers.append(server)
    agents[device_id] = server.address
    print(f"agent {device_id} listening on {server.address}")

plan = ExperimentPlan(
    plan_id="demo-sweep",
    devices=tuple(DeviceSpec(device_id=d, address=a) for d, a in sorted(agents.items())),
    compilers={
        d: (CompilerSpec(compiler_id="identity", is_identity=True), CompilerSpec(compiler_id="turbo"))
        for d in agents
    },
    models=(
        ModelSpec.from_catalog("ResNet-18"),
        ModelSpec.from_block("conv", width=64, depth=4),
    ),
    batch_sizes=(1, 2, 4, 8),
    repetitions=3,
)

try:
    result = run_plan(plan, journal_path=str(work / "journal.jsonl"), dial_timeout_s=5.0)
finally:
    for server in servers:
        server.stop()

print(f"\n{len(result.records)} records, {len(result.failures)} failures")
for record in result.records[:6]:
    print(
        f"  {record.device_id} {record.compiler_id:<9} {record.model_key:<18} "
        f"b{record.batch_size:<3} {record.throughput_mean:9.1f} samples/s"
    )
print("  ...")

archive = ResultsArchive.new(plan, result.records, result.failures)
save_archive(archive, work / "results.json.gz")
for path in write_report(archive, work / "report", formats=("csv", "svg")):
    print(f"wrote {path}")
print(f"\neverything under {work}")
