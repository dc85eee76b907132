"""Occupancy, RRT planning, and replanning around a dropped obstacle."""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from telehaptic import (GroundPlane, RrtParams, Scene, auto_volume,
                        build_occupancy, integrate_frame, look_at,
                        render_frame, replan_if_blocked, rrt_plan)
from telehaptic.camera import DEFAULT_INTRINSICS
from telehaptic.interact import place_obstacle
from telehaptic.planner import CellState
from telehaptic.simworld import Box, Floor

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = Scene(bounds=np.array([[0.0, 0.0, -1.0], [6.4, 6.4, 2.0]]),
              floor=Floor(0.0),
              boxes=[Box((3.4, 2.5, 0.0), (4.0, 3.9, 0.4))])
pose = look_at((0.6, 3.2, 1.4), (4.0, 3.2, 0.0))
intr = DEFAULT_INTRINSICS
volume = auto_volume(pose, resolution=128, voxel_size=0.05)
for _ in range(6):
    integrate_frame(volume, render_frame(scene, pose, intr), intr)

ground = GroundPlane(normal=np.array([0.0, 0.0, 1.0]), offset=0.0,
                     fitted_from=6)
grid = build_occupancy(volume, ground,
                       bounds=(scene.bounds[0][:2], scene.bounds[1][:2]))
start, goal = (0.8, 1.2), (5.6, 5.2)
plan = rrt_plan(grid, start, goal, RrtParams(seed=7))
print(f"initial plan: {len(plan.waypoints)} waypoints, cost {plan.cost:.2f} m")

# drop the obstacle right on a mid-route waypoint
mid = plan.waypoints[len(plan.waypoints) // 2]
obstacle = place_obstacle((mid[0], mid[1], 0.5), ground, robot_xy=start,
                          obstacle_id=1)
grid2 = build_occupancy(volume, ground, [obstacle],
                        bounds=(scene.bounds[0][:2], scene.bounds[1][:2]))
plan2, replanned, tr = replan_if_blocked(plan, grid2, start,
                                         RrtParams(seed=7))
print(f"obstacle at {obstacle.position.tolist()}: replanned={replanned} "
      f"in {tr * 1e3:.1f} ms, new cost {plan2.cost:.2f} m")

fig, ax = plt.subplots(figsize=(6.5, 6.5))
img = np.zeros(grid2.shape + (3,))
img[grid2.states == CellState.UNKNOWN] = (0.16, 0.16, 0.18)
img[grid2.states == CellState.FREE] = (0.28, 0.30, 0.34)
img[grid2.states == CellState.OCCUPIED] = (0.75, 0.35, 0.30)
img[grid2.inflated & (grid2.states != CellState.OCCUPIED)] = (0.45, 0.30, 0.28)
extent = [grid2.origin[0], grid2.origin[0] + grid2.shape[0] * grid2.cell_size,
          grid2.origin[1], grid2.origin[1] + grid2.shape[1] * grid2.cell_size]
ax.imshow(img.transpose(1, 0, 2), origin="lower", extent=extent)
ax.plot(plan.waypoints[:, 0], plan.waypoints[:, 1], "--", color="#aaa",
        label=f"before ({plan.cost:.2f} m)")
ax.plot(plan2.waypoints[:, 0], plan2.waypoints[:, 1], "-", color="#5cb85c",
        linewidth=2, label=f"after replan ({plan2.cost:.2f} m)")
ax.plot(*start, "o", color="#f0ad4e", label="start")
ax.plot(*goal, "*", markersize=14, color="#d9534f", label="goal")
ax.legend(loc="lower right")
ax.set_title("occupancy, inflation and the replanned path")
fig.tight_layout()
fig.savefig(OUT / "04_planning.png", dpi=110)
print(f"figure: {OUT / '04_planning.png'}")
