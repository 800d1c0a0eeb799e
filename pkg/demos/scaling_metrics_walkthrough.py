"""Walk through the scaling metrics on hand-made numbers, no devices needed.

Run: python demos/scaling_metrics_walkthrough.py
"""
from graphbench.blocks import BlockStackSpec, conv_block_params, mha_block_params, stack_params
from graphbench.metrics import (
    DepthPoint,
    ScalingSeries,
    ThroughputPoint,
    ase,
    bsr,
    depth_scaling_fit,
    rtr,
)

# A compiler that helps more at small batches than large ones. Throughput in
# samples/s as the batch grows: raw capacity rises, efficiency falls.
compiled = ScalingSeries(
    compiler_id="fuser",
    points=(
        ThroughputPoint(1, 220.0),
        ThroughputPoint(4, 640.0),
        ThroughputPoint(16, 1400.0),
        ThroughputPoint(64, 2100.0),
    ),
)
baseline = ScalingSeries(
    compiler_id="identity",
    points=(
        ThroughputPoint(1, 100.0),
        ThroughputPoint(4, 380.0),
        ThroughputPoint(16, 1100.0),
        ThroughputPoint(64, 1900.0),
    ),
)

print("batch   RTR      ASE      BSR")
for b in (1, 4, 16, 64):
    # RTR: throughput relative to this compiler's own batch-1 run.
    # ASE: RTR amortized per sample; 1.0 would be perfect linear scaling.
    # BSR: the compiler's ASE against the uncompiled baseline's ASE.
    print(
        f"{b:>5}   {rtr(compiled, b):<7.3f} {ase(compiled, b):<7.3f} "
        f"{bsr(compiled, baseline, b):<7.3f}"
    )

# Speedup over baseline at each stack depth, then one line summarizing how
# the advantage holds up as graphs get deeper.
speedup_by_depth = [
    DepthPoint(1, 2.2),
    DepthPoint(2, 2.0),
    DepthPoint(4, 1.7),
    DepthPoint(8, 1.3),
]
fit = depth_scaling_fit(speedup_by_depth)
print()
print(f"depth fit: slope {fit.slope:+.4f} speedup per layer, retention {fit.retention:.3f}")
print("(retention below 1: the compiler's edge erodes on deeper stacks)")

# Parameter counts for the synthetic block families, closed form.
print()
print("conv block @ width 64:", conv_block_params(64), "params")
print("mha  block @ width 128:", mha_block_params(128), "params")
print("conv stack w64 d6:", stack_params(BlockStackSpec("conv", 64, 6)), "params")
