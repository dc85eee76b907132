"""Interactive RGBD segmentation: seeded region growing, label fusion, metrics.

Growing admits 4-connected neighbours whose combined color/space distance to
the running cluster mean stays under a user threshold:

    d(x, S) = ||I(x) - I(S)||_2 + beta * ||P(x) - P(S)||_2

with I in CIELAB, P the back-projected 3D point (meters, camera frame) and
beta = compactness / grid_interval. Cluster means update incrementally after
every admission; the admission order is breadth-first from the seed, which
makes results deterministic.
"""

from __future__ import annotations

import dataclasses
from collections import deque

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .camera import CameraIntrinsics, RgbdFrame, invert_pose
from .errors import (BehindCamera, DimensionMismatch, InvalidSeed,
                     OutsideImage, UnknownLabel)
from .tsdf import TsdfVolume

# BFS neighbour order fixes the incremental-mean update order: up, left,
# right, down in (row, col) coordinates.
NEIGHBOR_OFFSETS = ((-1, 0), (0, -1), (0, 1), (1, 0))

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(rgb: NDArray) -> NDArray[np.float64]:
    """8-bit sRGB (D65) to CIELAB, vectorized over leading axes."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T / _D65_WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclasses.dataclass
class RegionParams:
    """Growth parameters; beta = compactness / grid_interval."""

    compactness: float = 10.0
    grid_interval: float = 10.0
    threshold: float = 12.0

    def __post_init__(self):
        if not 1.0 <= self.compactness <= 20.0:
            raise ValueError("compactness must lie in [1, 20]")
        if self.grid_interval <= 0:
            raise ValueError("grid_interval must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")

    @property
    def beta(self) -> float:
        return self.compactness / self.grid_interval


@dataclasses.dataclass
class ClusterStats:
    """Exact running means of the admitted pixels."""

    count: int
    mean_lab: NDArray[np.float64]
    mean_pos: NDArray[np.float64]

    def admit(self, lab, pos):
        self.count += 1
        self.mean_lab = self.mean_lab + (lab - self.mean_lab) / self.count
        self.mean_pos = self.mean_pos + (pos - self.mean_pos) / self.count


def seed_from_mark(mark, pose, intrinsics: CameraIntrinsics) -> tuple[int, int]:
    """Project a world mark into the image; returns (u, v) rounded pixel."""
    p_cam = invert_pose(np.asarray(pose, dtype=np.float64))[:3, :3] @ (
        np.asarray(mark, dtype=np.float64) - pose[:3, 3])
    if p_cam[2] <= 1e-9:
        raise BehindCamera(f"mark depth {p_cam[2]:.4f} m")
    u = int(round(intrinsics.cx + intrinsics.fx * p_cam[0] / p_cam[2]))
    v = int(round(intrinsics.cy + intrinsics.fy * p_cam[1] / p_cam[2]))
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise OutsideImage(f"mark projects to ({u}, {v})")
    return u, v


def region_grow(color: NDArray, depth_mm: NDArray, seed_uv: tuple[int, int],
                params: RegionParams, intrinsics: CameraIntrinsics,
                label_id: int = 1,
                frozen_stats: bool = False) -> tuple[NDArray[np.uint16], ClusterStats]:
    """Breadth-first region growing from a seed pixel.

    Returns the label image (0 background, label_id for the grown region) and
    the final cluster statistics. ``frozen_stats`` keeps the cluster mean
    fixed at the seed values (used by the monotonicity property; the default
    incremental update follows the running-average definition).
    """
    h, w = depth_mm.shape
    if color.shape[:2] != (h, w):
        raise DimensionMismatch("color and depth disagree")
    if (h, w) != intrinsics.shape:
        raise DimensionMismatch(
            f"image {h}x{w} does not match intrinsics {intrinsics.shape}")
    u0, v0 = seed_uv
    if not (0 <= u0 < w and 0 <= v0 < h) or depth_mm[v0, u0] == 0:
        raise InvalidSeed(f"seed ({u0}, {v0}) has no depth")

    lab = rgb_to_lab(color)
    dirs = intrinsics.pixel_dirs()
    pos = dirs * (depth_mm.astype(np.float64) * 1e-3)[..., None]
    valid = depth_mm > 0

    labels = np.zeros((h, w), dtype=np.uint16)
    seen = np.zeros((h, w), dtype=bool)
    stats = ClusterStats(1, lab[v0, u0].copy(), pos[v0, u0].copy())
    labels[v0, u0] = label_id
    seen[v0, u0] = True
    beta = params.beta
    frontier = deque()
    for dv, du in NEIGHBOR_OFFSETS:
        frontier.append((v0 + dv, u0 + du))

    while frontier:
        v, u = frontier.popleft()
        if not (0 <= v < h and 0 <= u < w) or seen[v, u]:
            continue
        seen[v, u] = True
        if not valid[v, u]:
            continue
        d = (np.linalg.norm(lab[v, u] - stats.mean_lab)
             + beta * np.linalg.norm(pos[v, u] - stats.mean_pos))
        if d > params.threshold:
            continue
        labels[v, u] = label_id
        if not frozen_stats:
            stats.admit(lab[v, u], pos[v, u])
        for dv, du in NEIGHBOR_OFFSETS:
            frontier.append((v + dv, u + du))
    return labels, stats


def fuse_labels(volume: TsdfVolume, labels: NDArray, frame: RgbdFrame,
                intrinsics: CameraIntrinsics) -> TsdfVolume:
    """Fuse a label image into the volume's label channel by weight voting.

    Near-surface voxels (|sdf| <= truncation) that project onto a labelled
    pixel either reinforce the stored label (weight + 1), weaken a
    conflicting one (weight - 1), or take over once the old weight drops to
    or below 1. Unlabelled observations leave voxels untouched.
    """
    frame.validate(intrinsics)
    if labels.shape != intrinsics.shape:
        raise DimensionMismatch("label image does not match intrinsics")
    res = volume.resolution
    vs = volume.voxel_size
    tau = volume.truncation
    w2c = invert_pose(frame.pose)
    rot = w2c[:3, :3].astype(np.float32)
    tr = w2c[:3, 3].astype(np.float32)
    depth = frame.depth.astype(np.float32) * np.float32(1e-3)
    depth_flat = depth.ravel()
    labels_flat = np.ascontiguousarray(labels).ravel()

    fields = volume._write_fields
    fields.ensure_labels()
    if volume._double:
        volume._wait_back_drained()
        from .tsdf import _sync_back
        _sync_back(volume)

    xs_all = (volume.origin[0] + (np.arange(res) + 0.5) * vs).astype(np.float32)
    ys = (volume.origin[1] + (np.arange(res) + 0.5) * vs).astype(np.float32)
    zs = (volume.origin[2] + (np.arange(res) + 0.5) * vs).astype(np.float32)
    chunk = max(1, int(4_000_000 // (res * res)))
    fx, fy = np.float32(intrinsics.fx), np.float32(intrinsics.fy)
    cx, cy = np.float32(intrinsics.cx), np.float32(intrinsics.cy)

    dirty_min = np.array([res, res, res], dtype=np.int64)
    dirty_max = np.array([-1, -1, -1], dtype=np.int64)
    for x0 in range(0, res, chunk):
        x1 = min(res, x0 + chunk)
        xs = xs_all[x0:x1]
        px = (rot[0, 0] * xs[:, None, None] + rot[0, 1] * ys[None, :, None]
              + rot[0, 2] * zs[None, None, :] + tr[0])
        py = (rot[1, 0] * xs[:, None, None] + rot[1, 1] * ys[None, :, None]
              + rot[1, 2] * zs[None, None, :] + tr[1])
        pz = (rot[2, 0] * xs[:, None, None] + rot[2, 1] * ys[None, :, None]
              + rot[2, 2] * zs[None, None, :] + tr[2])
        valid = pz > np.float32(1e-6)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.rint(cx + fx * px / pz).astype(np.int32)
            v = np.rint(cy + fy * py / pz).astype(np.int32)
        valid &= (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
        flat = np.flatnonzero(valid.ravel())
        if flat.size == 0:
            continue
        pix = v.ravel()[flat].astype(np.int64) * intrinsics.width + u.ravel()[flat]
        d = depth_flat[pix]
        sdf = d - pz.ravel()[flat]
        obs = labels_flat[pix]
        keep = (d > 0) & (np.abs(sdf) <= tau) & (obs != 0)
        if not keep.any():
            continue
        flat = flat[keep]
        obs = obs[keep].astype(np.uint16)

        lab_flat = fields.label[x0:x1].reshape(-1)
        lw_flat = fields.label_weight[x0:x1].reshape(-1)
        stored = lab_flat[flat]
        weight = lw_flat[flat]
        same = stored == obs
        strong = ~same & (weight > 1)
        swap = ~same & (weight <= 1)
        weight = np.where(same, weight + 1, weight)
        weight = np.where(strong, weight - 1, weight)
        weight = np.where(swap, 1.0, weight)
        stored = np.where(swap, obs, stored)
        lab_flat[flat] = stored
        lw_flat[flat] = weight

        iz = flat % res
        iy = (flat // res) % res
        ix = flat // (res * res) + x0
        dirty_min = np.minimum(dirty_min, [ix.min(), iy.min(), iz.min()])
        dirty_max = np.maximum(dirty_max, [ix.max(), iy.max(), iz.max()])

    dirty = None
    if dirty_max[0] >= 0:
        dirty = tuple((int(dirty_min[k]), int(dirty_max[k])) for k in range(3))
    volume._publish(dirty)
    return volume


def object_extent(volume: TsdfVolume, label_id: int):
    """Centroid and axis-aligned bounds of the voxels carrying a label."""
    volume.fields.ensure_labels()
    mask = (volume.label == label_id) & (volume.label_weight > 0)
    idx = np.argwhere(mask)
    if idx.shape[0] == 0:
        raise UnknownLabel(f"label {label_id} absent from volume")
    centers = volume.origin[None, :] + (idx + 0.5) * volume.voxel_size
    return centers.mean(axis=0), np.stack([centers.min(axis=0),
                                           centers.max(axis=0)])


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SegMetrics:
    pri: float
    bde: float
    gce: float

    def csv_row(self) -> str:
        return f"{self.pri!r},{self.bde!r},{self.gce!r}"


def _contingency(seg: NDArray, truth: NDArray):
    sl, su = np.unique(seg, return_inverse=True)
    tl, tu = np.unique(truth, return_inverse=True)
    table = np.zeros((len(sl), len(tl)), dtype=np.int64)
    np.add.at(table, (su.ravel(), tu.ravel()), 1)
    return table


def boundary_mask(labels: NDArray) -> NDArray[np.bool_]:
    """Pixels with any 4-neighbour carrying a different label."""
    b = np.zeros(labels.shape, dtype=bool)
    b[:-1, :] |= labels[:-1, :] != labels[1:, :]
    b[1:, :] |= labels[1:, :] != labels[:-1, :]
    b[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    b[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    return b


def _directional_bde(src: NDArray, dst: NDArray) -> float:
    if not src.any() or not dst.any():
        return 0.0
    dist = ndimage.distance_transform_edt(~dst)
    return float(dist[src].mean())


def evaluate(seg: NDArray, truth: NDArray) -> SegMetrics:
    """PRI, BDE and GCE between a segmentation and a reference.

    PRI counts label-consistent pixel pairs, BDE averages symmetric nearest
    boundary displacement, GCE takes the milder direction of the local
    refinement error. Identical inputs give (1, 0, 0); a strict refinement
    gives GCE 0.
    """
    seg = np.asarray(seg)
    truth = np.asarray(truth)
    if seg.shape != truth.shape:
        raise DimensionMismatch(f"{seg.shape} vs {truth.shape}")
    n = seg.size
    table = _contingency(seg, truth)
    ns = table.sum(axis=1).astype(np.float64)
    nt = table.sum(axis=0).astype(np.float64)
    tf = table.astype(np.float64)

    pairs = n * (n - 1) / 2.0
    same_seg = float((ns * (ns - 1)).sum() / 2.0)
    same_truth = float((nt * (nt - 1)).sum() / 2.0)
    same_both = float((tf * (tf - 1)).sum() / 2.0)
    agreements = pairs - same_seg - same_truth + 2.0 * same_both
    pri = agreements / pairs if pairs > 0 else 1.0

    bs = boundary_mask(seg)
    bt = boundary_mask(truth)
    bde = 0.5 * (_directional_bde(bs, bt) + _directional_bde(bt, bs))

    with np.errstate(invalid="ignore", divide="ignore"):
        e_st = float(np.nansum(tf * (ns[:, None] - tf) / ns[:, None]))
        e_ts = float(np.nansum(tf * (nt[None, :] - tf) / nt[None, :]))
    gce = min(e_st, e_ts) / n

    return SegMetrics(pri=float(pri), bde=float(bde), gce=float(gce))


def save_label_png(labels: NDArray, path) -> None:
    """16-bit grayscale PNG of object ids."""
    from PIL import Image

    arr = np.asarray(labels, dtype=np.uint16)
    img = Image.new("I;16", (arr.shape[1], arr.shape[0]))
    img.frombytes(arr.tobytes())
    img.save(path)


def load_label_png(path) -> NDArray[np.uint16]:
    from PIL import Image

    return np.asarray(Image.open(path), dtype=np.uint16)
