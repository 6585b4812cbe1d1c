"""Train AGPS, then look at where the critic puts its value.

The critic is evaluated on a y-z slice through the socket and the peak is
compared with the box the scripted oracle proposes for the pruning phase.
A coarse text heat map is printed with the box centre marked.
"""
from dataclasses import replace

import numpy as np

from agps.harness import qmap_report
from agps.orchestrator import RunConfig, run_training

cfg = replace(RunConfig(budget=20_000), seed=1)
metrics, run = run_training(cfg)
print(f"final eval success {metrics.final_success:.2f}")

report, land = qmap_report(run.agent_rl, cfg, resolution=15)
print(f"argmax {np.round(report['argmax'], 3)}, box centre {np.round(report['bbox_center'], 3)}")
print(f"distance {report['distance'] * 1000:.1f} mm vs half diagonal {report['bbox_half_diagonal'] * 1000:.1f} mm")

shades = " .:-=+*#%@"
v = land.values
norm = (v - v.min()) / max(np.ptp(v), 1e-12)
ys, zs = land.grid_a, land.grid_b
cy = np.argmin(abs(ys - report["bbox_center"][1]))
cz = np.argmin(abs(zs - report["bbox_center"][2]))
for j in reversed(range(len(zs))):
    row = "".join("X" if (i, j) == (cy, cz) else shades[int(norm[i, j] * 9)] for i in range(len(ys)))
    print(f"z={zs[j]:.3f} |{row}|")
print("           y ->   (X marks the oracle box centre)")
