"""Shared fixtures: analytic depth rendering used as an independent oracle.

The renderer here is deliberately written as straight closed-form math (one
primitive at a time, nearest hit wins) so the production code in
telehaptic.simworld and telehaptic.tsdf can be validated against it.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from telehaptic.camera import CameraIntrinsics, RgbdFrame, look_at

TEST_INTRINSICS = CameraIntrinsics(fx=200.0, fy=200.0, cx=80.0, cy=60.0,
                                   width=160, height=120,
                                   depth_min=0.2, depth_max=6.0)


@dataclasses.dataclass
class OraclePlane:
    normal: np.ndarray
    offset: float
    color: tuple = (180, 180, 180)
    bounds: tuple | None = None  # ((xmin,ymin),(xmax,ymax)) in world xy


@dataclasses.dataclass
class OracleBox:
    lo: np.ndarray
    hi: np.ndarray
    color: tuple = (200, 60, 60)


@dataclasses.dataclass
class OracleSphere:
    center: np.ndarray
    radius: float
    color: tuple = (60, 60, 200)


def render_oracle(primitives, pose, intrinsics=TEST_INTRINSICS, seq=0, t_ms=0):
    """Closed-form nearest-hit depth+color render, z-depth parameterization."""
    dirs = intrinsics.pixel_dirs()  # (H, W, 3), z component 1
    d_w = dirs @ pose[:3, :3].T
    o = pose[:3, 3]
    h, w = intrinsics.shape
    best_t = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3), dtype=np.uint8)

    for prim in primitives:
        if isinstance(prim, OraclePlane):
            n = np.asarray(prim.normal, dtype=np.float64)
            denom = d_w @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (prim.offset - o @ n) / denom
            t = np.where(np.abs(denom) > 1e-12, t, np.inf)
            if prim.bounds is not None:
                p = o[None, None, :] + t[..., None] * d_w
                (bx0, by0), (bx1, by1) = prim.bounds
                ok = ((p[..., 0] >= bx0) & (p[..., 0] <= bx1)
                      & (p[..., 1] >= by0) & (p[..., 1] <= by1))
                t = np.where(ok, t, np.inf)
        elif isinstance(prim, OracleBox):
            lo = np.asarray(prim.lo, dtype=np.float64)
            hi = np.asarray(prim.hi, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d_w
            t0 = (lo[None, None, :] - o[None, None, :]) * inv
            t1 = (hi[None, None, :] - o[None, None, :]) * inv
            tn = np.nanmax(np.minimum(t0, t1), axis=-1)
            tf = np.nanmin(np.maximum(t0, t1), axis=-1)
            t = np.where((tn <= tf) & (tn > 0), tn, np.inf)
        elif isinstance(prim, OracleSphere):
            c = np.asarray(prim.center, dtype=np.float64)
            oc = o - c
            a = np.sum(d_w * d_w, axis=-1)
            b = 2.0 * (d_w @ oc)
            cc = oc @ oc - prim.radius ** 2
            disc = b * b - 4 * a * cc
            sq = np.sqrt(np.maximum(disc, 0.0))
            t = (-b - sq) / (2 * a)
            t = np.where((disc >= 0) & (t > 0), t, np.inf)
        else:
            raise TypeError(prim)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        color[closer] = prim.color

    in_range = (best_t >= intrinsics.depth_min) & (best_t <= intrinsics.depth_max)
    depth_m = np.where(in_range, best_t, 0.0)
    depth = np.rint(depth_m * 1000.0).astype(np.uint16)
    color[~in_range] = 0
    return RgbdFrame(seq=seq, timestamp_ms=t_ms, depth=depth, color=color,
                     pose=np.asarray(pose, dtype=np.float64))


@pytest.fixture(scope="session")
def intrinsics():
    return TEST_INTRINSICS


@pytest.fixture(scope="session")
def floor_frames(intrinsics):
    """Ten frames of a flat floor z=0 seen from slightly varying poses."""
    frames = []
    for k in range(10):
        eye = np.array([0.05 * k, 0.02 * k, 1.0])
        pose = look_at(eye, eye + np.array([1.0, 0.0, -1.0]))
        frames.append(render_oracle([OraclePlane(np.array([0, 0, 1.0]), 0.0)],
                                    pose, intrinsics, seq=k, t_ms=50 * k))
    return frames
