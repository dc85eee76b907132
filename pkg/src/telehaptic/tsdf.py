"""Truncated signed distance field: fusion, sampling, ray casting, ground fit.

The volume is a dense cubic voxel grid. Per voxel it stores the clamped signed
distance (float32 in [-1, 1], scaled by the truncation band), the fusion
weight, an RGB color, and an object label with its own fusion weight. A
quantized int8 mirror of the tsdf ("march" grid, value = round(100 * tsdf),
-128 = never observed) exists purely so the ray-march inner loop touches a
quarter of the memory.

Readers and the single fusion writer are decoupled by snapshots. In the
default single-buffer mode a snapshot aliases the live arrays (safe when one
loop interleaves fusion and reads). With ``double_buffered=True`` the volume
keeps two array generations: fusion writes the back set, swaps, then copies
the dirty region forward once draining readers release the old front. Reader
acquisition is a refcount increment under a mutex, so a reader never stalls
on fusion for more than microseconds.
"""

from __future__ import annotations

import dataclasses
import struct
import threading
import time

import numpy as np
from numpy.typing import NDArray

from .camera import CameraIntrinsics, RgbdFrame, check_pose, invert_pose
from .errors import NoDominantPlane, OutOfVolume

VALID_RESOLUTIONS = (64, 128, 256, 384, 512)
DEFAULT_VOXEL_SIZE = 0.010
DEFAULT_TRUNCATION = 0.050
WEIGHT_CAP = 128.0
MARCH_UNOBSERVED = np.int8(-128)

_DUMP_MAGIC = b"TSDF"
_VOXEL_DTYPE = np.dtype([
    ("tsdf", "<f4"),
    ("weight", "<f4"),
    ("color", "u1", (3,)),
    ("label", "<u2"),
    ("label_weight", "<f4"),
])


class _Fields:
    """One generation of volume storage."""

    __slots__ = ("tsdf", "weight", "color", "march", "label", "label_weight")

    def __init__(self, resolution: int):
        shape = (resolution, resolution, resolution)
        self.tsdf = np.ones(shape, dtype=np.float32)
        self.weight = np.zeros(shape, dtype=np.float32)
        self.color = np.zeros(shape + (3,), dtype=np.uint8)
        self.march = np.full(shape, MARCH_UNOBSERVED, dtype=np.int8)
        self.label = None  # lazy uint16
        self.label_weight = None  # lazy float32

    def ensure_labels(self):
        if self.label is None:
            shape = self.tsdf.shape
            self.label = np.zeros(shape, dtype=np.uint16)
            self.label_weight = np.zeros(shape, dtype=np.float32)


@dataclasses.dataclass
class VolumeSnapshot:
    """Read view over one coherent generation of the field."""

    resolution: int
    voxel_size: float
    truncation: float
    origin: NDArray[np.float64]
    generation: int
    fields: _Fields
    _release: object = None

    @property
    def tsdf(self):
        return self.fields.tsdf

    @property
    def weight(self):
        return self.fields.weight

    @property
    def march(self):
        return self.fields.march

    def release(self):
        if self._release is not None:
            self._release()
            self._release = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()


class TsdfVolume:
    """Dense TSDF voxel grid with weighted running-average fusion."""

    def __init__(self, resolution: int = 128, voxel_size: float = DEFAULT_VOXEL_SIZE,
                 truncation: float = DEFAULT_TRUNCATION, origin=(0.0, 0.0, 0.0),
                 weight_cap: float = WEIGHT_CAP, double_buffered: bool = False):
        if resolution not in VALID_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {VALID_RESOLUTIONS}")
        if voxel_size <= 0 or truncation <= 0:
            raise ValueError("voxel_size and truncation must be positive")
        self.resolution = int(resolution)
        self.voxel_size = float(voxel_size)
        self.truncation = float(truncation)
        self.origin = np.asarray(origin, dtype=np.float64).copy()
        self.weight_cap = float(weight_cap)
        self.generation = 0
        self._double = bool(double_buffered)
        self._sets = [_Fields(self.resolution)]
        if self._double:
            self._sets.append(_Fields(self.resolution))
        self._front = 0
        self._readers = [0, 0]
        self._pending_sync = None
        self._lock = threading.Lock()
        self._drained = threading.Condition(self._lock)

    # -- storage access -------------------------------------------------

    @property
    def _write_fields(self) -> _Fields:
        return self._sets[1 - self._front] if self._double else self._sets[0]

    @property
    def fields(self) -> _Fields:
        return self._sets[self._front]

    @property
    def tsdf(self):
        return self.fields.tsdf

    @property
    def weight(self):
        return self.fields.weight

    @property
    def color(self):
        return self.fields.color

    @property
    def march(self):
        return self.fields.march

    @property
    def label(self):
        self.fields.ensure_labels()
        return self.fields.label

    @property
    def label_weight(self):
        self.fields.ensure_labels()
        return self.fields.label_weight

    @property
    def extent(self) -> float:
        return self.resolution * self.voxel_size

    def max_corner(self) -> NDArray[np.float64]:
        return self.origin + self.extent

    def voxel_centers_axis(self, axis_origin: float) -> NDArray[np.float64]:
        return axis_origin + (np.arange(self.resolution) + 0.5) * self.voxel_size

    def snapshot(self) -> VolumeSnapshot:
        """Coherent read view; release() (or `with`) when done in threaded use."""
        if not self._double:
            return VolumeSnapshot(self.resolution, self.voxel_size, self.truncation,
                                  self.origin, self.generation, self._sets[0])
        with self._lock:
            idx = self._front
            self._readers[idx] += 1

            def _rel(i=idx):
                with self._lock:
                    self._readers[i] -= 1
                    self._drained.notify_all()

            return VolumeSnapshot(self.resolution, self.voxel_size, self.truncation,
                                  self.origin, self.generation, self._sets[idx], _rel)

    def _publish(self, dirty: tuple | None):
        """Swap generations; the dirty copy is deferred to the next write."""
        self.generation += 1
        if not self._double:
            return
        with self._lock:
            self._front = 1 - self._front
            self._pending_sync = dirty

    def _wait_back_drained(self, timeout: float | None = None):
        if timeout is None:
            timeout = getattr(self, "sync_timeout", 5.0)
        back = 1 - self._front
        deadline = time.monotonic() + timeout
        with self._lock:
            while self._readers[back] > 0:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._drained.wait(remaining):
                    raise RuntimeError(
                        "snapshot held across multiple fusion generations")


def auto_volume(camera_pose: NDArray, resolution: int = 128,
                voxel_size: float = DEFAULT_VOXEL_SIZE,
                truncation: float | None = None,
                depth_min: float = 0.3, **kwargs) -> TsdfVolume:
    """Volume placed so the first camera sits near the frustum near face.

    The default truncation tracks the voxel size (five voxels, floored at
    the standard 50 mm band) so coarse grids keep a meaningful surface shell.
    """
    if truncation is None:
        truncation = max(5.0 * voxel_size, DEFAULT_TRUNCATION)
    extent = resolution * voxel_size
    forward = np.asarray(camera_pose[:3, 2], dtype=np.float64)
    center = camera_pose[:3, 3] + forward * (extent / 2.0 + depth_min)
    origin = center - extent / 2.0
    return TsdfVolume(resolution, voxel_size, truncation, origin, **kwargs)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def integrate_frame(volume: TsdfVolume, frame: RgbdFrame,
                    intrinsics: CameraIntrinsics) -> TsdfVolume:
    """Fuse one RGBD frame into the volume by weighted running average.

    For every voxel projecting onto a valid depth pixel the projective signed
    distance ``sdf = d_pix - z_cam`` is computed; voxels deeper than one
    truncation band behind the surface are left untouched, everything else is
    merged with observation weight 1 (weight capped at ``weight_cap``).
    """
    frame.validate(intrinsics)
    res = volume.resolution
    vs = volume.voxel_size
    tau = volume.truncation
    w2c = invert_pose(frame.pose)
    rot = w2c[:3, :3].astype(np.float32)
    tr = w2c[:3, 3].astype(np.float32)

    depth = frame.depth.astype(np.float32) * np.float32(1e-3)
    frame_dmax = float(depth.max(initial=0.0))
    fields = volume._write_fields
    if volume._double:
        # back buffer lags one generation; catch it up before writing
        volume._wait_back_drained()
        _sync_back(volume)

    xs_all = (volume.origin[0] + (np.arange(res, dtype=np.float64) + 0.5) * vs).astype(np.float32)
    ys = (volume.origin[1] + (np.arange(res, dtype=np.float64) + 0.5) * vs).astype(np.float32)
    zs = (volume.origin[2] + (np.arange(res, dtype=np.float64) + 0.5) * vs).astype(np.float32)

    chunk = max(1, int(4_000_000 // (res * res)))
    fx, fy = np.float32(intrinsics.fx), np.float32(intrinsics.fy)
    cx, cy = np.float32(intrinsics.cx), np.float32(intrinsics.cy)
    w_img, h_img = intrinsics.width, intrinsics.height
    cap = np.float32(volume.weight_cap)
    tau32 = np.float32(tau)

    dirty_min = np.array([res, res, res], dtype=np.int64)
    dirty_max = np.array([-1, -1, -1], dtype=np.int64)

    col_img = frame.color.reshape(-1, 3)
    depth_flat = depth.ravel()

    for x0 in range(0, res, chunk):
        x1 = min(res, x0 + chunk)
        xs = xs_all[x0:x1]
        # conservative slab cull on camera z
        corners = np.array([[xa, yb, zc] for xa in (xs[0], xs[-1])
                            for yb in (ys[0], ys[-1]) for zc in (zs[0], zs[-1])],
                           dtype=np.float32)
        zc_corners = corners @ rot[2] + tr[2]
        if zc_corners.max() <= 0 or zc_corners.min() > frame_dmax + tau:
            continue

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
        valid &= (u >= 0) & (u < w_img) & (v >= 0) & (v < h_img)
        flat = np.flatnonzero(valid.ravel())
        if flat.size == 0:
            continue
        pix = v.ravel()[flat].astype(np.int64) * w_img + u.ravel()[flat]
        d = depth_flat[pix]
        zc = pz.ravel()[flat]
        sdf = d - zc
        keep = (d > 0) & (sdf >= -tau32)
        if not keep.any():
            continue
        flat = flat[keep]
        pix = pix[keep]
        obs = np.clip(sdf[keep] / tau32, np.float32(-1.0), np.float32(1.0))

        t_flat = fields.tsdf[x0:x1].reshape(-1)
        w_flat = fields.weight[x0:x1].reshape(-1)
        c_flat = fields.color[x0:x1].reshape(-1, 3)
        m_flat = fields.march[x0:x1].reshape(-1)

        w_old = w_flat[flat]
        w_new = w_old + np.float32(1.0)
        t_new = (w_old * t_flat[flat] + obs) / w_new
        c_new = ((w_old[:, None] * c_flat[flat].astype(np.float32)
                  + col_img[pix].astype(np.float32)) / w_new[:, None])
        t_flat[flat] = t_new
        w_flat[flat] = np.minimum(w_new, cap)
        c_flat[flat] = np.rint(c_new).astype(np.uint8)
        m_flat[flat] = np.rint(t_new * np.float32(100.0)).astype(np.int8)

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


def _sync_back(volume: TsdfVolume):
    """Catch the write buffer up with the previous generation's dirty region."""
    dirty = volume._pending_sync
    if dirty is None:
        return
    (x0, x1), (y0, y1), (z0, z1) = dirty
    sl = (slice(x0, x1 + 1), slice(y0, y1 + 1), slice(z0, z1 + 1))
    src, dst = volume.fields, volume._write_fields
    dst.tsdf[sl] = src.tsdf[sl]
    dst.weight[sl] = src.weight[sl]
    dst.color[sl] = src.color[sl]
    dst.march[sl] = src.march[sl]
    if src.label is not None:
        dst.ensure_labels()
        dst.label[sl] = src.label[sl]
        dst.label_weight[sl] = src.label_weight[sl]
    volume._pending_sync = None


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _tri_unchecked(flat: NDArray, res: int, g: NDArray) -> NDArray:
    """Trilinear blend at grid coordinates assumed within support, float32."""
    i0 = g.astype(np.int32)
    f = g - i0
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    r2 = res * res
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c00 = flat.take(base) * (1 - fx) + flat.take(base + r2) * fx
    c10 = flat.take(base + res) * (1 - fx) + flat.take(base + r2 + res) * fx
    c01 = flat.take(base + 1) * (1 - fx) + flat.take(base + r2 + 1) * fx
    c11 = (flat.take(base + res + 1) * (1 - fx)
           + flat.take(base + r2 + res + 1) * fx)
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def _trilinear(arr: NDArray, origin: NDArray, voxel_size: float,
               pts: NDArray) -> tuple[NDArray, NDArray]:
    """Trilinear interpolation at (N, 3) points.

    Returns (values, supported) where unsupported points (interpolation cube
    not fully inside the grid) carry value 1.0.
    """
    res = arr.shape[0]
    g = (np.atleast_2d(pts) - origin) / voxel_size - 0.5
    i0 = np.floor(g).astype(np.int64)
    ok = ((i0 >= 0) & (i0 <= res - 2)).all(axis=-1)
    i0c = np.clip(i0, 0, res - 2)
    f = g - i0
    base = (i0c[:, 0] * res + i0c[:, 1]) * res + i0c[:, 2]
    flat = arr.reshape(-1)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    r2 = res * res
    c000 = flat.take(base)
    c100 = flat.take(base + r2)
    c010 = flat.take(base + res)
    c110 = flat.take(base + r2 + res)
    c001 = flat.take(base + 1)
    c101 = flat.take(base + r2 + 1)
    c011 = flat.take(base + res + 1)
    c111 = flat.take(base + r2 + res + 1)
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    vals = c0 * (1 - fz) + c1 * fz
    vals = np.where(ok, vals, 1.0)
    return vals, ok


def sample_tsdf_batch(volume, pts: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """Trilinear tsdf values and central-difference gradients at (N, 3) points.

    Returns (values, gradients, supported). The gradient differentiates the
    interpolated field with step h = voxel_size.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    origin, vs = volume.origin, volume.voxel_size
    arr = volume.tsdf
    vals, ok = _trilinear(arr, origin, vs, pts)
    grads = np.zeros_like(pts)
    h = vs
    for ax in range(3):
        dp = np.zeros(3)
        dp[ax] = h
        vp, okp = _trilinear(arr, origin, vs, pts + dp)
        vm, okm = _trilinear(arr, origin, vs, pts - dp)
        grads[:, ax] = (vp - vm) / (2.0 * h)
        ok = ok & okp & okm
    return vals, grads, ok


def sample_tsdf(volume, point) -> tuple[float, NDArray[np.float64]]:
    """Interpolated tsdf value and gradient at one world point.

    Raises OutOfVolume when the point is not at least one voxel inside the
    grid (the gradient stencil must be fully supported).
    """
    vals, grads, ok = sample_tsdf_batch(volume, np.asarray(point, dtype=np.float64))
    if not ok[0]:
        raise OutOfVolume(f"point {point} outside sampled interior")
    return float(vals[0]), grads[0]


def sample_tsdf_value(volume, point, outside=None) -> float:
    """Trilinear tsdf value only; `outside` (if given) replaces OutOfVolume."""
    vals, ok = _trilinear(volume.tsdf, volume.origin, volume.voxel_size,
                          np.asarray(point, dtype=np.float64)[None, :])
    if not ok[0]:
        if outside is None:
            raise OutOfVolume(f"point {point} outside sampled interior")
        return float(outside)
    return float(vals[0])


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class SurfaceSample:
    """One extracted surface point."""

    position: NDArray[np.float64]
    normal: NDArray[np.float64]
    pixel: tuple[int, int]  # (v, u) row, column
    valid: bool


@dataclasses.dataclass
class RaycastResult:
    """Per-pixel surface extraction from one camera pose."""

    positions: NDArray[np.float64]  # (H, W, 3)
    normals: NDArray[np.float64]  # (H, W, 3)
    valid: NDArray[np.bool_]  # (H, W)
    generation: int = -1
    _reduce_cache: tuple | None = dataclasses.field(default=None, repr=False)

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    def sample_at(self, v: int, u: int) -> SurfaceSample:
        return SurfaceSample(self.positions[v, u].copy(), self.normals[v, u].copy(),
                             (v, u), bool(self.valid[v, u]))

    def reduce_arrays(self):
        """Compacted valid positions plus squared norms, row-major order.

        Cached so the 1 kHz haptic loop pays the compaction once per cast.
        """
        if self._reduce_cache is None:
            flat_valid = self.valid.ravel()
            idx = np.flatnonzero(flat_valid)
            pts = self.positions.reshape(-1, 3)[idx]
            norm2 = np.einsum("ij,ij->i", pts, pts)
            self._reduce_cache = (idx, pts, norm2)
        return self._reduce_cache


def raycast(volume, pose: NDArray, intrinsics: CameraIntrinsics,
            step: float | None = None) -> RaycastResult:
    """Per-pixel ray march through the TSDF.

    Rays start at the camera depth_min and advance by at most half the
    truncation band. A positive-to-negative sign change between two observed
    samples marks a surface crossing; the hit is refined by linearly
    interpolating the two bracketing trilinearly-resampled values and the
    normal is the normalized interpolated-field gradient there. Pixels whose
    ray leaves the volume (or the depth range) without crossing are invalid.
    """
    check_pose(pose)
    snap = volume.snapshot() if isinstance(volume, TsdfVolume) else volume
    res = snap.resolution
    vs = snap.voxel_size
    tau = snap.truncation
    if step is None:
        step = tau / 2.0
    step = float(min(step, tau / 2.0))

    h_img, w_img = intrinsics.shape
    n_rays = h_img * w_img
    dirs_cam = intrinsics.pixel_dirs().reshape(-1, 3)
    norms = np.linalg.norm(dirs_cam, axis=1)
    dirs_world = (dirs_cam / norms[:, None]) @ pose[:3, :3].T
    origin_cam = pose[:3, 3]

    # volume entry/exit in arc length (slab method)
    lo = snap.origin
    hi = snap.origin + res * vs
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs_world
    t0 = (lo[None, :] - origin_cam[None, :]) * inv
    t1 = (hi[None, :] - origin_cam[None, :]) * inv
    t_enter = np.nanmax(np.minimum(t0, t1), axis=1)
    t_exit = np.nanmin(np.maximum(t0, t1), axis=1)

    s_begin = np.maximum(norms * intrinsics.depth_min, t_enter + 1e-9)
    s_end = np.minimum(norms * intrinsics.depth_max, t_exit - 1e-9)

    alive = np.flatnonzero(s_begin < s_end)
    march_flat = snap.march.reshape(-1)
    hit_ids = []
    hit_s1 = []
    hit_v1 = []
    hit_v2 = []

    # march in grid coordinates with float32 increments. Terminated rays keep
    # streaming through the loop with active=False (the extra samples are
    # harmless) and the state arrays are compacted every few steps; positions
    # stay inside the volume by construction of s_begin/s_end, so index
    # clamping only touches boundary-skin rounding.
    inv_vs = 1.0 / vs
    ids = alive
    s0 = s_begin[alive]
    p_first = origin_cam[None, :] + s0[:, None] * dirs_world[alive]
    g = ((p_first - lo[None, :]) * inv_vs).astype(np.float32)
    gstep = (dirs_world[alive] * (step * inv_vs)).astype(np.float32)
    remaining = np.floor((s_end[alive] - s0) / step).astype(np.int32)
    prev = np.full(ids.shape, MARCH_UNOBSERVED, dtype=np.int8)
    active = np.ones(ids.shape, dtype=bool)
    hi_idx = np.float32(res - 1.0001)
    lo_idx = np.float32(0.0)
    steps_local = np.zeros(ids.shape, dtype=np.int32)
    m = 0
    while True:
        if m % 8 == 0:
            if not active.any():
                break
            if active.size and active.mean() < 0.7:
                ids = ids[active]
                s0 = s0[active]
                g = g[active]
                gstep = gstep[active]
                remaining = remaining[active]
                prev = prev[active]
                steps_local = steps_local[active]
                active = np.ones(ids.shape, dtype=bool)
        gi = np.minimum(np.maximum(g, lo_idx), hi_idx).astype(np.int32)
        cur = march_flat.take((gi[:, 0] * res + gi[:, 1]) * res + gi[:, 2])
        crossing = active & (prev > 0) & (cur <= 0) & (cur != MARCH_UNOBSERVED)
        if crossing.any():
            hit_ids.append(ids[crossing])
            hit_s1.append(s0[crossing] + (steps_local[crossing] - 1) * step)
            hit_v1.append(prev[crossing].astype(np.float64) / 100.0)
            hit_v2.append(cur[crossing].astype(np.float64) / 100.0)
        active &= ~crossing & (remaining > 0)
        remaining -= 1
        steps_local += 1
        g += gstep
        prev = cur
        m += 1

    positions = np.zeros((n_rays, 3))
    normals = np.zeros((n_rays, 3))
    valid = np.zeros(n_rays, dtype=bool)

    if hit_ids:
        ids = np.concatenate(hit_ids)
        s1 = np.concatenate(hit_s1)
        v1 = np.concatenate(hit_v1)
        v2 = np.concatenate(hit_v2)
        d = dirs_world[ids]
        p1 = origin_cam[None, :] + s1[:, None] * d
        p2 = origin_cam[None, :] + (s1 + step)[:, None] * d
        tsdf_flat = snap.tsdf.reshape(-1)
        g1 = ((p1 - lo[None, :]) / vs - 0.5).astype(np.float32)
        g2 = ((p2 - lo[None, :]) / vs - 0.5).astype(np.float32)
        ok1 = ((g1 >= 0) & (g1 <= res - 2)).all(axis=1)
        ok2 = ((g2 >= 0) & (g2 <= res - 2)).all(axis=1)
        tv1 = _tri_unchecked(tsdf_flat, res, np.where(ok1[:, None], g1, 0))
        tv2 = _tri_unchecked(tsdf_flat, res, np.where(ok2[:, None], g2, 0))
        use = ok1 & ok2 & (tv1 > 0) & (tv2 <= 0)
        v1 = np.where(use, tv1, v1)
        v2 = np.where(use, tv2, v2)
        denom = v1 - v2
        denom[denom <= 1e-12] = 1e-12
        frac = np.clip(v1 / denom, 0.0, 1.0)
        hits = p1 + (frac * step)[:, None] * d

        # central-difference gradient of the interpolated field, computed in
        # grid space (a one-cell shift is exactly one voxel_size in world)
        gq = ((hits - lo[None, :]) / vs - 0.5).astype(np.float32)
        gok = ((gq >= 1) & (gq <= res - 3)).all(axis=1)
        gq_safe = np.where(gok[:, None], gq, 1)
        grads = np.empty((len(ids), 3), dtype=np.float32)
        for ax in range(3):
            shift = np.zeros(3, dtype=np.float32)
            shift[ax] = 1.0
            grads[:, ax] = (_tri_unchecked(tsdf_flat, res, gq_safe + shift)
                            - _tri_unchecked(tsdf_flat, res, gq_safe - shift))
        grads = grads.astype(np.float64) / (2.0 * vs)
        glen = np.linalg.norm(grads, axis=1)
        good = gok & (glen > 1e-9)
        n = np.zeros_like(grads)
        n[good] = grads[good] / glen[good][:, None]

        positions[ids[good]] = hits[good]
        normals[ids[good]] = n[good]
        valid[ids[good]] = True

    if isinstance(snap, VolumeSnapshot):
        result_gen = snap.generation
        snap.release()
    else:  # pragma: no cover - snapshot passthrough
        result_gen = getattr(snap, "generation", -1)
    return RaycastResult(positions.reshape(h_img, w_img, 3),
                         normals.reshape(h_img, w_img, 3),
                         valid.reshape(h_img, w_img),
                         generation=result_gen)


# ---------------------------------------------------------------------------
# ground plane
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class GroundPlane:
    """Plane {x : normal . x = offset} with a unit normal."""

    normal: NDArray[np.float64]
    offset: float
    fitted_from: int

    def height_of(self, pts: NDArray) -> NDArray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.normal - self.offset

    def project(self, pt: NDArray) -> NDArray[np.float64]:
        pt = np.asarray(pt, dtype=np.float64)
        return pt - self.height_of(pt[None, :])[0] * self.normal

    def drop_vertical(self, pt: NDArray) -> NDArray[np.float64]:
        """Point on the plane directly below (world -z) the given point."""
        pt = np.asarray(pt, dtype=np.float64)
        nz = self.normal[2]
        if abs(nz) < 1e-9:
            return self.project(pt)
        z = (self.offset - self.normal[0] * pt[0] - self.normal[1] * pt[1]) / nz
        return np.array([pt[0], pt[1], z])


def detect_ground_plane(frames, intrinsics: CameraIntrinsics,
                        inlier_threshold: float = 2 * DEFAULT_VOXEL_SIZE,
                        iterations: int = 200, min_inlier_fraction: float = 0.30,
                        seed: int = 0, max_points: int = 40_000) -> GroundPlane:
    """Robust plane fit over the lowest height quartile of back-projected points.

    Random-sample consensus with the given iteration budget; the returned
    normal points toward the side the cameras are on. Raises NoDominantPlane
    when fewer than ``min_inlier_fraction`` of the candidate points support
    the best plane.
    """
    from .camera import backproject

    frames = list(frames)
    if len(frames) < 3:
        raise ValueError("need at least 3 frames")
    pts = []
    cams = []
    for f in frames:
        stride = 2
        pts.append(backproject(f, intrinsics, stride=stride))
        cams.append(f.pose[:3, 3])
    pts = np.concatenate(pts, axis=0) if pts else np.empty((0, 3))
    if pts.shape[0] < 3:
        raise NoDominantPlane("no valid depth in frames")
    if pts.shape[0] > max_points:
        rng0 = np.random.default_rng(seed)
        pts = pts[rng0.choice(pts.shape[0], max_points, replace=False)]

    zq = np.quantile(pts[:, 2], 0.25)
    cand = pts[pts[:, 2] <= zq]
    if cand.shape[0] < 3:
        raise NoDominantPlane("too few candidate points")

    rng = np.random.default_rng(seed + 1)
    best_inliers = None
    best_count = -1
    n_c = cand.shape[0]
    for _ in range(iterations):
        idx = rng.choice(n_c, 3, replace=False)
        a, b, c = cand[idx]
        n = np.cross(b - a, c - a)
        ln = np.linalg.norm(n)
        if ln < 1e-12:
            continue
        n = n / ln
        d = np.abs((cand - a) @ n)
        inl = d <= inlier_threshold
        cnt = int(inl.sum())
        if cnt > best_count:
            best_count = cnt
            best_inliers = inl
    if best_inliers is None or best_count < min_inlier_fraction * n_c:
        raise NoDominantPlane(
            f"best plane has {best_count}/{n_c} inliers")

    sup = cand[best_inliers]
    centroid = sup.mean(axis=0)
    _, _, vt = np.linalg.svd(sup - centroid, full_matrices=False)
    normal = vt[2]
    normal = normal / np.linalg.norm(normal)
    cam_mean = np.mean(cams, axis=0)
    if np.dot(normal, cam_mean - centroid) < 0:
        normal = -normal
    return GroundPlane(normal=normal, offset=float(normal @ centroid),
                       fitted_from=len(frames))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def dump_volume(volume: TsdfVolume, path) -> None:
    """Binary dump: TSDF magic, header, then packed little-endian voxels."""
    fields = volume.fields
    fields.ensure_labels()
    n = volume.resolution ** 3
    rec = np.empty(n, dtype=_VOXEL_DTYPE)
    rec["tsdf"] = fields.tsdf.ravel()
    rec["weight"] = fields.weight.ravel()
    rec["color"] = fields.color.reshape(-1, 3)
    rec["label"] = fields.label.ravel()
    rec["label_weight"] = fields.label_weight.ravel()
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<I", volume.resolution))
        fh.write(struct.pack("<ff", volume.voxel_size, volume.truncation))
        fh.write(struct.pack("<3f", *volume.origin))
        fh.write(rec.tobytes())


def load_volume(path) -> TsdfVolume:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DUMP_MAGIC:
            raise ValueError(f"bad volume magic {magic!r}")
        (res,) = struct.unpack("<I", fh.read(4))
        vs, tau = struct.unpack("<ff", fh.read(8))
        origin = struct.unpack("<3f", fh.read(12))
        rec = np.frombuffer(fh.read(), dtype=_VOXEL_DTYPE)
    if rec.size != res ** 3:
        raise ValueError("truncated volume dump")
    vol = TsdfVolume(int(res), float(vs), float(tau), origin)
    shape = (res, res, res)
    f = vol.fields
    f.tsdf = rec["tsdf"].reshape(shape).copy()
    f.weight = rec["weight"].reshape(shape).copy()
    f.color = rec["color"].reshape(shape + (3,)).copy()
    f.ensure_labels()
    f.label = rec["label"].reshape(shape).copy()
    f.label_weight = rec["label_weight"].reshape(shape).copy()
    f.march = np.where(f.weight > 0,
                       np.rint(f.tsdf * 100.0).astype(np.int8),
                       MARCH_UNOBSERVED)
    return vol


def surface_voxel_mask(volume, shell: float | None = None) -> NDArray[np.bool_]:
    """Voxels within one voxel of the zero crossing."""
    if shell is None:
        shell = volume.voxel_size / volume.truncation
    fields = volume.fields if isinstance(volume, TsdfVolume) else volume
    return (fields.weight > 0) & (np.abs(fields.tsdf) <= shell)


def export_ply(volume: TsdfVolume, path, shell: float | None = None) -> int:
    """ASCII PLY point cloud of surface voxels with color and label."""
    mask = surface_voxel_mask(volume)
    idx = np.argwhere(mask)
    centers = volume.origin[None, :] + (idx + 0.5) * volume.voxel_size
    colors = volume.color[mask]
    volume.fields.ensure_labels()
    labels = volume.label[mask]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(idx)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("property ushort label\n")
        fh.write("end_header\n")
        for c, col, lab in zip(centers, colors, labels):
            fh.write(f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} "
                     f"{col[0]} {col[1]} {col[2]} {lab}\n")
    return len(idx)
