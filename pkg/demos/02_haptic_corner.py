"""Force shading at a sharp corner: smooth proxy versus the naive jump.

Drives a 2 mm-step HIP traverse over the box-front/floor scene with both
proxy-update rules and plots the x-z cross sections of the two proxy paths.
The naive nearest-point rule teleports the proxy across the convex edge once
the penetration exceeds the distance to the neighbouring face; the
constraint-plane update stays continuous.
"""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from telehaptic.bench import corner_bench
from telehaptic.haptic import read_trace

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

result = corner_bench(OUT / "corner")
shaded = read_trace(result.shaded_trace)
naive = read_trace(result.naive_trace)

for name, trace in (("force shading", shaded), ("naive nearest", naive)):
    steps = np.linalg.norm(np.diff(trace["proxy"], axis=0), axis=1)
    print(f"{name}: max per-step proxy displacement "
          f"{steps.max() * 1e3:.2f} mm over {len(steps)} steps")

fig, ax = plt.subplots(figsize=(7, 5))
ax.plot(shaded["hip"][:, 0], shaded["hip"][:, 2], color="#999",
        linewidth=1, label="HIP path")
ax.plot(naive["proxy"][:, 0], naive["proxy"][:, 2], ".", markersize=3,
        color="#d9534f", label="naive proxy")
ax.plot(shaded["proxy"][:, 0], shaded["proxy"][:, 2], ".", markersize=3,
        color="#5cb85c", label="force-shaded proxy")
ax.add_patch(plt.Rectangle((0.5, 0.0), 0.4, 0.4, color="#ccc", zorder=0))
ax.axhline(0.0, color="#888", linewidth=1, zorder=0)
ax.set_xlim(0.25, 0.75)
ax.set_ylim(-0.08, 0.45)
ax.set_xlabel("x (m)")
ax.set_ylabel("z (m)")
ax.set_title("proxy paths across the floor/box corner")
ax.legend(loc="upper left")
fig.tight_layout()
fig.savefig(OUT / "02_corner.png", dpi=110)
print(f"figure: {OUT / '02_corner.png'}")
