"""Haptic benchmarks: corner-smoothness traces and per-resolution timing.

The corner bench fuses a box-front/floor scene and drives a 2 mm-step HIP
traverse twice, once with the force-shaded proxy update and once with the
naive nearest-point update, writing both trace CSVs. The timing bench runs
the haptic tick (collision detection + proxy update, with the periodic
per-pixel raycast refresh amortized in, matching how the original pipeline
attributes ray casting to collision detection) against volumes of growing
resolution at fixed voxel size, so the marched distances grow with the
resolution.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, DEFAULT_INTRINSICS, look_at
from .haptic import HapticRenderer, HapticState
from .simworld import Box, Floor, Scene, render_frame
from .tsdf import TsdfVolume, auto_volume, integrate_frame

CORNER_WALL_X = 0.5
CORNER_TOP_Z = 0.4
HIP_STEP = 0.002  # m


def corner_scene() -> Scene:
    return Scene(bounds=np.array([[-1.0, -1.5, -1.0], [2.0, 1.5, 2.0]]),
                 floor=Floor(0.0),
                 boxes=[Box((CORNER_WALL_X, -0.3, 0.0),
                            (0.9, 0.3, CORNER_TOP_Z), color=(205, 75, 60))])


def corner_camera_pose():
    return look_at((-0.25, 0.0, 0.95), (0.65, 0.0, 0.0))


def corner_traverse(step: float = HIP_STEP) -> np.ndarray:
    """Press into the floor, slide to the wall, climb it, press past the edge."""
    pts = [np.array([0.30, 0.0, 0.05])]

    def seg(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(round(np.linalg.norm(b - a) / step)))
        for i in range(1, n + 1):
            pts.append(a + (b - a) * i / n)

    seg((0.30, 0.0, 0.05), (0.30, 0.0, -0.01))
    seg((0.30, 0.0, -0.01), (0.49, 0.0, -0.01))
    seg((0.49, 0.0, -0.01), (0.49, 0.0, 0.365))
    seg((0.49, 0.0, 0.365), (0.55, 0.0, 0.365))
    return np.asarray(pts)


@dataclasses.dataclass
class CornerBenchResult:
    shaded_trace: Path
    naive_trace: Path
    hip_step: float
    voxel_size: float
    max_shaded_step: float
    max_naive_step: float
    runtime_s: float


def corner_bench(out_dir, resolution: int = 128, voxel_size: float = 0.01,
                 intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                 frames: int = 8) -> CornerBenchResult:
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = corner_scene()
    pose = corner_camera_pose()
    vol = auto_volume(pose, resolution=resolution, voxel_size=voxel_size,
                      depth_min=intrinsics.depth_min)
    frame = render_frame(scene, pose, intrinsics)
    for _ in range(frames):
        integrate_frame(vol, frame, intrinsics)

    path = corner_traverse()
    results = {}
    for naive in (False, True):
        renderer = HapticRenderer(vol, pose, intrinsics,
                                  HapticState.free(path[0]), naive=naive)
        for k, h in enumerate(path):
            renderer.step(h, timestamp_ms=float(k))
        name = "naive" if naive else "shaded"
        trace_path = out_dir / f"trace_{name}.csv"
        renderer.write_trace(trace_path)
        proxies = np.array([row[4:7] for row in renderer.trace])
        steps = np.linalg.norm(np.diff(proxies, axis=0), axis=1)
        results[name] = (trace_path, float(steps.max()))
    runtime = time.perf_counter() - t0
    return CornerBenchResult(
        shaded_trace=results["shaded"][0], naive_trace=results["naive"][0],
        hip_step=HIP_STEP, voxel_size=voxel_size,
        max_shaded_step=results["shaded"][1],
        max_naive_step=results["naive"][1], runtime_s=runtime)


# ---------------------------------------------------------------------------
# timing across resolutions
# ---------------------------------------------------------------------------

def timing_scene() -> Scene:
    return Scene(bounds=np.array([[-1.0, -3.2, -1.0], [7.0, 3.2, 3.0]]),
                 floor=Floor(0.0))


TIMING_EYE = (0.05, 0.0, 0.30)
TIMING_TARGET = (3.0, 0.0, 0.30)  # level view: march length scales with volume


@dataclasses.dataclass
class TimingRow:
    resolution: int
    mean_tick_ms: float
    p95_tick_ms: float
    raycast_ms: float
    fuse_s: float


def timing_bench(resolutions=(64, 128, 256, 384, 512), out_csv=None,
                 intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                 voxel_size: float = 0.01, ticks: int = 400,
                 refresh_every: int = 50, frames: int = 3) -> list[TimingRow]:
    """Mean haptic tick cost per TSDF resolution, raycast refresh included.

    The haptic loop nominally runs at 1 kHz against a 15-20 fps fusion
    stream, so one per-pixel surface refresh is charged every 50 ticks.
    """
    scene = timing_scene()
    pose = look_at(TIMING_EYE, TIMING_TARGET)
    rows = []
    for res in resolutions:
        vol = auto_volume(pose, resolution=res, voxel_size=voxel_size,
                          depth_min=intrinsics.depth_min)
        frame = render_frame(scene, pose, intrinsics)
        t0 = time.perf_counter()
        for _ in range(frames):
            integrate_frame(vol, frame, intrinsics)
        fuse_s = time.perf_counter() - t0

        # HIP slide on the fused floor, kept inside even the smallest volume
        xs = np.linspace(0.75, 0.95, ticks)
        hip_path = np.stack([xs, np.zeros(ticks), np.full(ticks, -0.004)],
                            axis=1)
        renderer = HapticRenderer(vol, pose, intrinsics,
                                  HapticState.free(hip_path[0]))
        renderer.refresh(force=True)  # warm caches outside the timed loop

        t_ray0 = time.perf_counter()
        renderer.refresh(force=True)
        raycast_ms = (time.perf_counter() - t_ray0) * 1e3

        tick_times = np.empty(ticks)
        for k in range(ticks):
            t1 = time.perf_counter()
            if k % refresh_every == 0:
                renderer.refresh(force=True)
            renderer.step(hip_path[k], timestamp_ms=float(k))
            tick_times[k] = time.perf_counter() - t1
        rows.append(TimingRow(
            resolution=res, mean_tick_ms=float(tick_times.mean() * 1e3),
            p95_tick_ms=float(np.percentile(tick_times, 95) * 1e3),
            raycast_ms=raycast_ms, fuse_s=fuse_s))
        del vol
    if out_csv is not None:
        with open(out_csv, "w") as fh:
            fh.write("resolution,mean_tick_ms,p95_tick_ms,raycast_ms,fuse_s\n")
            for r in rows:
                fh.write(f"{r.resolution},{r.mean_tick_ms!r},{r.p95_tick_ms!r},"
                         f"{r.raycast_ms!r},{r.fuse_s!r}\n")
    return rows
