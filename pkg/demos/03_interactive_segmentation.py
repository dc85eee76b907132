"""Haptic-seeded segmentation: grow a region, fuse labels, score it.

A mark on the box top seeds a color+depth region grower; the label image is
fused into the TSDF by weight voting and the labelled object's centroid and
bounds drop out for the task layer. The grower is scored against the known
box mask with the three benchmark metrics.
"""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from telehaptic import (Scene, auto_volume, evaluate, integrate_frame,
                        look_at, object_extent, render_frame)
from telehaptic.camera import DEFAULT_INTRINSICS
from telehaptic.interact import mark_object
from telehaptic.segment import RegionParams
from telehaptic.simworld import Box, Floor

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = Scene(bounds=np.array([[-1.0, -1.5, -1.0], [3.0, 1.5, 2.0]]),
              floor=Floor(0.0, color=(125, 125, 125)),
              boxes=[Box((0.8, -0.25, 0.0), (1.3, 0.25, 0.35),
                         color=(215, 70, 45))])
pose = look_at((-0.3, 0.0, 1.1), (1.0, 0.0, 0.0))
intr = DEFAULT_INTRINSICS

volume = auto_volume(pose, resolution=128, voxel_size=0.01)
frame = render_frame(scene, pose, intr)
for _ in range(5):
    integrate_frame(volume, frame, intr)

mark = (1.0, 0.0, 0.34)  # touch on the box top
label, fresh = mark_object(mark, volume, frame, intr,
                           RegionParams(threshold=15.0))
print(f"mark at {mark} -> label {label} (fresh segmentation: {fresh})")
centroid, bounds = object_extent(volume, label)
print(f"object centroid {np.round(centroid, 3).tolist()}, "
      f"bounds {np.round(bounds, 2).tolist()}")

# score the 2D region against the rendered box mask
from telehaptic.segment import region_grow, seed_from_mark

seed = seed_from_mark(mark, pose, intr)
labels, _ = region_grow(frame.color, frame.depth, seed,
                        RegionParams(threshold=15.0), intr)
truth = (frame.color == np.array([215, 70, 45])).all(axis=-1).astype(int)
metrics = evaluate(labels, truth)
print(f"PRI {metrics.pri:.4f}  BDE {metrics.bde:.3f} px  GCE {metrics.gce:.4f}")

fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
axes[0].imshow(frame.color)
axes[0].plot(seed[0], seed[1], "w+", markersize=12)
axes[0].set_title("color frame and mark")
axes[1].imshow(labels, cmap="magma")
axes[1].set_title("grown region")
axes[2].imshow(truth, cmap="magma")
axes[2].set_title("ground truth")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "03_segmentation.png", dpi=110)
print(f"figure: {OUT / '03_segmentation.png'}")
