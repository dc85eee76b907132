"""End-to-end mixed-initiative run: marked path, mid-run obstacle, replan.

The operator (scripted here) marks a path along the corridor, then drops a
virtual obstacle onto it while the robot is underway. The server replans
around it and the robot completes the route; the executed trace and all
metric artifacts land in demos/out/full_run/.
"""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from telehaptic.orchestrator import obstacle_midrun_config, run_scenario

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

result = run_scenario(obstacle_midrun_config(seed=2), OUT / "full_run")
print(f"completed={result.completed}  te={result.te_s:.1f} s  "
      f"lp={result.lp_m:.2f} m  goal error {result.goal_error_m:.3f} m")
print(f"replanned={result.replanned}  replanning times "
      f"{[f'{t * 1e3:.0f} ms' for t in result.replan_times]}")
print(f"minimum clearance to occupied cells: {result.min_clearance_m:.2f} m")
for name, path in result.artifacts.items():
    print(f"  {name}: {path}")

import json

payload = json.loads((OUT / "full_run" / "path.json").read_text())
executed = np.array(payload["executed"])
plan = np.array(payload["plan"]["waypoints"])
fig, ax = plt.subplots(figsize=(7, 7))
ax.plot(executed[:, 0], executed[:, 1], color="#5bc0de", linewidth=2,
        label="executed trajectory")
ax.plot(plan[:, 0], plan[:, 1], "--", color="#5cb85c", label="final plan")
ax.add_patch(plt.Circle((3.2, 1.5), 0.2, color="#d9534f", alpha=0.7,
                        label="dropped obstacle"))
ax.add_patch(plt.Rectangle((4.0, 2.9), 0.5, 0.6, color="#999", alpha=0.7))
ax.set_aspect("equal")
ax.set_xlim(0, 6.4)
ax.set_ylim(0, 6.4)
ax.legend(loc="upper left")
ax.set_title("mid-run obstacle scenario")
fig.tight_layout()
fig.savefig(OUT / "06_full_scenario.png", dpi=110)
print(f"figure: {OUT / '06_full_scenario.png'}")
