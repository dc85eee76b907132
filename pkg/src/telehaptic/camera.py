"""Pinhole camera model, RGBD frames and rigid-transform helpers.

Conventions used throughout the package:

* camera frame: +z forward (optical axis), +x right, +y down (image v grows
  downward), matching ``u = cx + fx * x / z``.
* world frame: +z up.
* poses are 4x4 row-major matrices mapping camera coordinates to world
  coordinates.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, PoseInvalid

ORTHONORMAL_TOL = 1e-6


@dataclasses.dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters plus the valid depth range in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = 0.3
    depth_max: float = 8.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError("need 0 < depth_min < depth_max")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_dirs(self) -> NDArray[np.float64]:
        """Camera-frame ray directions with z component 1, shape (H, W, 3).

        Parameterizing rays as ``t * dir`` makes the parameter t equal to the
        pinhole z-depth of the point.
        """
        us = np.arange(self.width, dtype=np.float64)
        vs = np.arange(self.height, dtype=np.float64)
        x = (us[None, :] - self.cx) / self.fx
        y = (vs[:, None] - self.cy) / self.fy
        dirs = np.empty((self.height, self.width, 3))
        dirs[..., 0] = x
        dirs[..., 1] = y
        dirs[..., 2] = 1.0
        return dirs

    def project(self, pts_cam: NDArray) -> tuple[NDArray, NDArray]:
        """Project camera-frame points to pixel coordinates (u, v), unrounded."""
        z = pts_cam[..., 2]
        u = self.cx + self.fx * pts_cam[..., 0] / z
        v = self.cy + self.fy * pts_cam[..., 1] / z
        return u, v


def make_pose(rotation: NDArray, translation: NDArray) -> NDArray[np.float64]:
    pose = np.eye(4)
    pose[:3, :3] = rotation
    pose[:3, 3] = translation
    return pose


def check_pose(pose: NDArray, tol: float = ORTHONORMAL_TOL) -> None:
    """Raise PoseInvalid unless the rotation block is orthonormal within tol."""
    pose = np.asarray(pose)
    if pose.shape != (4, 4):
        raise PoseInvalid(f"pose must be 4x4, got {pose.shape}")
    r = pose[:3, :3]
    err = np.abs(r @ r.T - np.eye(3)).max()
    if err > tol or not np.isfinite(pose).all():
        raise PoseInvalid(f"rotation orthonormality error {err:.2e} exceeds {tol:.0e}")


def invert_pose(pose: NDArray) -> NDArray[np.float64]:
    r = pose[:3, :3]
    t = pose[:3, 3]
    inv = np.eye(4)
    inv[:3, :3] = r.T
    inv[:3, 3] = -r.T @ t
    return inv


def transform_points(pose: NDArray, pts: NDArray) -> NDArray:
    """Apply a 4x4 rigid transform to (..., 3) points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ pose[:3, :3].T + pose[:3, 3]


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> NDArray[np.float64]:
    """Camera-to-world pose for a camera at eye looking toward target.

    Image up corresponds to the world ``up`` hint; falls back to +y when the
    view direction is parallel to the hint.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z_c = forward / n
    up = np.asarray(up, dtype=np.float64)
    down = -up
    y_c = down - np.dot(down, z_c) * z_c
    if np.linalg.norm(y_c) < 1e-9:
        down = np.array([0.0, -1.0, 0.0])
        y_c = down - np.dot(down, z_c) * z_c
    y_c /= np.linalg.norm(y_c)
    x_c = np.cross(y_c, z_c)
    rot = np.stack([x_c, y_c, z_c], axis=1)
    return make_pose(rot, eye)


@dataclasses.dataclass
class RgbdFrame:
    """One RGBD observation with its camera-to-world pose.

    depth is uint16 millimeters with 0 marking invalid pixels; color is uint8
    RGB; timestamp is milliseconds since session start.
    """

    seq: int
    timestamp_ms: int
    depth: NDArray[np.uint16]
    color: NDArray[np.uint8]
    pose: NDArray[np.float64]

    def validate(self, intrinsics: CameraIntrinsics) -> None:
        if self.depth.shape != intrinsics.shape:
            raise DimensionMismatch(
                f"depth {self.depth.shape} vs intrinsics {intrinsics.shape}")
        if self.color.shape != intrinsics.shape + (3,):
            raise DimensionMismatch(
                f"color {self.color.shape} vs intrinsics {intrinsics.shape}")
        check_pose(self.pose)

    def depth_m(self) -> NDArray[np.float64]:
        return self.depth.astype(np.float64) * 1e-3

    def equals(self, other: "RgbdFrame") -> bool:
        return (
            self.seq == other.seq
            and self.timestamp_ms == other.timestamp_ms
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.color, other.color)
            and np.array_equal(self.pose, other.pose)
        )


def backproject(frame: RgbdFrame, intrinsics: CameraIntrinsics,
                stride: int = 1) -> NDArray[np.float64]:
    """World-frame points for every valid depth pixel, shape (N, 3)."""
    depth = frame.depth_m()[::stride, ::stride]
    dirs = intrinsics.pixel_dirs()[::stride, ::stride]
    valid = depth > 0
    pts_cam = dirs[valid] * depth[valid][:, None]
    return transform_points(frame.pose, pts_cam)


DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=277.0, fy=277.0, cx=160.0, cy=120.0, width=320, height=240,
    depth_min=0.3, depth_max=8.0)
