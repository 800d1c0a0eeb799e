"""Kill an agent mid-plan, bring it back, and resume from the checkpoint.

The agent checkpoints after every task, so the second run only executes what
the crash left unfinished and the final archive matches an uninterrupted run.

Run: python demos/crash_and_resume.py
"""
import json
import sys
import tempfile
from pathlib import Path

from graphbench.agent import AgentServer
from graphbench.coordinator import NoDevicesReachableError, run_plan
from graphbench.model import CompilerSpec, DeviceSpec, ExperimentPlan, ModelSpec
from graphbench.synthetic import CompilerProfile, SyntheticProfile

work = Path(tempfile.mkdtemp(prefix="graphbench-resume-"))

profile = SyntheticProfile(
    base_latency_s=0.01,
    per_sample_cost_s=0.001,
    jitter_amplitude=0.0,
    seed=3,
    compilers={
        "identity": CompilerProfile(speedup=1.0),
        "turbo": CompilerProfile(speedup=2.0),
    },
)
profile_path = work / "profile.json"
profile_path.write_text(json.dumps(profile.to_document()))
argv = [sys.executable, "-m", "graphbench.synthetic", "--profile", str(profile_path)]
manifest = {"identity": argv, "turbo": argv}
state_dir = work / "agent-state"


def make_plan(address: str) -> ExperimentPlan:
    return ExperimentPlan(
        plan_id="resume-demo",
        devices=(DeviceSpec(device_id="node-a", address=address),),
        compilers={
            "node-a": (
                CompilerSpec(compiler_id="identity", is_identity=True),
                CompilerSpec(compiler_id="turbo"),
            )
        },
        models=(ModelSpec.from_block("conv", width=32, depth=2),),
        batch_sizes=(1, 2, 4),
        repetitions=3,
        checkpoint_every=1,
    )


# First attempt: the agent is rigged to die after finishing 2 of the 6 tasks.
doomed = AgentServer("127.0.0.1:0", state_dir, manifest, chaos_stop_after_tasks=2)
doomed.start()
print(f"agent up at {doomed.address}, will crash after 2 tasks")
try:
    run_plan(make_plan(doomed.address), dial_timeout_s=5.0)
except NoDevicesReachableError as exc:
    print(f"run failed as expected: {exc}")
finally:
    doomed.stop()

checkpoint = next(state_dir.glob("*.ckpt.json"))
done = json.loads(checkpoint.read_text())
print(f"checkpoint {checkpoint.name} survived with {len(done['completed'])} completed tasks")

# Second attempt: a healthy agent on the SAME state directory picks up the
# checkpoint and reruns only the missing tasks.
revived = AgentServer("127.0.0.1:0", state_dir, manifest)
revived.start()
print(f"agent back at {revived.address}, resuming")
try:
    result = run_plan(make_plan(revived.address), dial_timeout_s=5.0)
finally:
    revived.stop()

print(f"resume finished: {len(result.records)} records, {len(result.failures)} failures")
for record in result.records:
    print(
        f"  {record.compiler_id:<9} b{record.batch_size:<3} "
        f"{record.throughput_mean:8.1f} samples/s"
    )
