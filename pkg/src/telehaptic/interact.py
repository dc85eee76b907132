"""The four haptic interfaces: path marking, object marking, virtual
obstacles, and penalty-based pushing of virtual bodies.

Proxy events arrive from the haptic loop; everything here turns them into
tasks, obstacles or scene edits for the control tick to consume. Interface
events also exist as a JSON schema (schemas/interface_event.schema.json)
that the operator console speaks.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.typing import NDArray

from .camera import CameraIntrinsics, RgbdFrame
from .errors import EmptyMarking, OverlapsRobot, SegmentationFailed
from .planner import VirtualObstacle
from .segment import RegionParams, fuse_labels, object_extent, region_grow, seed_from_mark
from .tsdf import GroundPlane, TsdfVolume, sample_tsdf_value

FLOOR_TOLERANCE = 0.02  # m, marking contacts must touch the floor this close
MIN_SPACING = 0.05  # m, path downsampling


@dataclasses.dataclass
class MarkingPath:
    """Ordered on-plane floor points with minimum spacing."""

    points: NDArray[np.float64]  # (N, 3) on the ground plane
    min_spacing: float = MIN_SPACING
    created_at: float = 0.0

    @property
    def xy(self) -> NDArray[np.float64]:
        return self.points[:, :2]


def mark_path(contacts, ground: GroundPlane, min_spacing: float = MIN_SPACING,
              floor_tolerance: float = FLOOR_TOLERANCE,
              created_at: float = 0.0) -> MarkingPath:
    """Filter proxy contacts to the floor and downsample to min spacing."""
    kept = []
    for c in np.atleast_2d(np.asarray(contacts, dtype=np.float64)):
        if abs(float(ground.height_of(c[None, :])[0])) > floor_tolerance:
            continue
        p = ground.project(c)
        if kept and np.linalg.norm(p[:2] - kept[-1][:2]) < min_spacing:
            continue
        kept.append(p)
    if not kept:
        raise EmptyMarking("no contact within the floor tolerance")
    return MarkingPath(points=np.asarray(kept), min_spacing=min_spacing,
                       created_at=created_at)


def next_label_id(volume: TsdfVolume) -> int:
    volume.fields.ensure_labels()
    return int(volume.label.max()) + 1


def mark_object(contact, volume: TsdfVolume, frame: RgbdFrame,
                intrinsics: CameraIntrinsics,
                params: RegionParams | None = None,
                surface_band: float = 0.5):
    """Resolve a surface contact to an object label, segmenting on demand.

    A contact on an already-labelled voxel returns that label. Otherwise the
    mark is projected into the given frame, a region is grown and fused, and
    the fresh label is returned. Raises SegmentationFailed when the contact
    is not on a fused surface or the grow comes up empty.
    """
    contact = np.asarray(contact, dtype=np.float64)
    value = sample_tsdf_value(volume, contact, outside=1.0)
    if abs(value) > surface_band:
        raise SegmentationFailed(
            f"contact field value {value:.2f} is not near a surface")
    volume.fields.ensure_labels()
    vs = volume.voxel_size
    idx = np.floor((contact - volume.origin) / vs).astype(int)
    idx = np.clip(idx, 0, volume.resolution - 1)
    stored = int(volume.label[idx[0], idx[1], idx[2]])
    if stored != 0:
        return stored, False

    if params is None:
        params = RegionParams()
    try:
        seed = seed_from_mark(contact, frame.pose, intrinsics)
    except Exception as exc:
        raise SegmentationFailed(f"mark does not project into the frame: {exc}")
    try:
        labels, _ = region_grow(frame.color, frame.depth, seed, params,
                                intrinsics, label_id=1)
    except Exception as exc:
        raise SegmentationFailed(str(exc))
    if labels.sum() == 0:
        raise SegmentationFailed("region growing admitted no pixels")
    new_id = next_label_id(volume)
    fuse_labels(volume, labels.astype(np.uint16) * new_id, frame, intrinsics)
    try:
        object_extent(volume, new_id)
    except Exception:
        raise SegmentationFailed("label did not fuse into the volume")
    return new_id, True


def place_obstacle(cursor, ground: GroundPlane, robot_xy, obstacle_id: int,
                   footprint: float = 0.2, shape: str = "sphere",
                   robot_radius: float = 0.30) -> VirtualObstacle:
    """Project the cursor vertically onto the ground and register an obstacle."""
    cursor = np.asarray(cursor, dtype=np.float64)
    on_ground = ground.drop_vertical(cursor)
    robot_xy = np.asarray(robot_xy, dtype=np.float64)
    if np.linalg.norm(on_ground[:2] - robot_xy) <= footprint + robot_radius:
        raise OverlapsRobot(
            f"obstacle at {on_ground[:2].tolist()} intersects the robot disc")
    return VirtualObstacle(id=obstacle_id, shape=shape,
                           position=on_ground[:2].copy(), footprint=footprint)


# ---------------------------------------------------------------------------
# haptic-driven physics
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class VirtualBody:
    """Pushable rigid body constrained to the ground plane."""

    id: int
    shape: str  # "sphere" | "box"
    position: NDArray[np.float64]  # (3,) center, z fixed by the ground
    velocity: NDArray[np.float64]  # (2,) planar
    mass: float = 1.0
    contact_stiffness: float = 200.0  # N/m
    damping: float = 2.0  # 1/s velocity decay
    radius: float = 0.15  # sphere radius or box half-extent (cubes)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.velocity = np.asarray(self.velocity, dtype=np.float64).copy()
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    def footprint(self) -> float:
        return self.radius if self.shape == "sphere" else self.radius * np.sqrt(2.0)

    def penetration(self, hip) -> tuple[float, NDArray[np.float64]]:
        """Depth and outward push direction (from HIP toward the body center)."""
        hip = np.asarray(hip, dtype=np.float64)
        if self.shape == "sphere":
            delta = self.position - hip
            dist = float(np.linalg.norm(delta))
            depth = self.radius - dist
            if depth <= 0 or dist < 1e-12:
                return 0.0, np.zeros(3)
            return depth, delta / dist
        # axis-aligned cube: nearest face pushback
        delta = hip - self.position
        overlap = self.radius - np.abs(delta)
        if (overlap <= 0).any():
            return 0.0, np.zeros(3)
        axis = int(np.argmin(overlap))
        n = np.zeros(3)
        n[axis] = -np.sign(delta[axis]) if delta[axis] != 0 else 1.0
        return float(overlap[axis]), n


def push_body(body: VirtualBody, hip, dt: float,
              static_grid=None) -> VirtualBody:
    """Semi-implicit Euler step of the penalty contact with the HIP.

    The body stays on the ground plane (z fixed); when it would enter a
    static occupied cell the motion is clamped at the contact point and the
    velocity zeroed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    depth, normal = body.penetration(hip)
    new = dataclasses.replace(body)
    force = body.contact_stiffness * depth * normal[:2]
    vel = body.velocity + force / body.mass * dt
    vel = vel * max(0.0, 1.0 - body.damping * dt)
    new.velocity = vel
    target_xy = body.position[:2] + vel * dt

    if static_grid is not None and _footprint_blocked(static_grid, target_xy,
                                                      body.footprint()):
        lo, hi = 0.0, 1.0
        start = body.position[:2]
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            probe = start + (target_xy - start) * mid
            if _footprint_blocked(static_grid, probe, body.footprint()):
                hi = mid
            else:
                lo = mid
        target_xy = start + (target_xy - start) * lo
        new.velocity = np.zeros(2)
    new.position = np.array([target_xy[0], target_xy[1], body.position[2]])
    return new


def _footprint_blocked(grid, xy, footprint: float) -> bool:
    """Footprint disc versus raw occupied cells (not the inflated layer)."""
    from .planner import CellState

    occupied = np.argwhere(grid.states == CellState.OCCUPIED)
    if occupied.shape[0] == 0:
        return False
    centers = grid.origin[None, :] + (occupied + 0.5) * grid.cell_size
    d = np.linalg.norm(centers - np.asarray(xy)[None, :], axis=1)
    return bool((d <= footprint + grid.cell_size * 0.5).any())


def body_as_obstacle(body: VirtualBody) -> VirtualObstacle:
    return VirtualObstacle(id=10_000 + body.id, shape="sphere",
                           position=body.position[:2].copy(),
                           footprint=body.footprint())


# ---------------------------------------------------------------------------
# interface event schema
# ---------------------------------------------------------------------------

EVENT_TYPES = ("mark_path", "mark_object", "place_obstacle",
               "remove_obstacle", "push")


def validate_event(event: dict) -> dict:
    """Structural validation of an interface-event JSON object."""
    if not isinstance(event, dict):
        raise ValueError("event must be an object")
    kind = event.get("type")
    if kind not in EVENT_TYPES:
        raise ValueError(f"unknown event type {kind!r}")
    def need(key, length=None):
        if key not in event:
            raise ValueError(f"{kind} event missing {key!r}")
        if length is not None:
            val = event[key]
            if (not isinstance(val, (list, tuple)) or len(val) != length
                    or not all(isinstance(x, (int, float)) for x in val)):
                raise ValueError(f"{kind}.{key} must be {length} numbers")

    if kind == "mark_path":
        pts = event.get("points")
        if (not isinstance(pts, list) or len(pts) == 0
                or not all(isinstance(p, (list, tuple)) and len(p) == 3
                           for p in pts)):
            raise ValueError("mark_path.points must be a list of [x,y,z]")
    elif kind == "mark_object":
        need("point", 3)
    elif kind == "place_obstacle":
        need("pos", 2)
        if event.get("shape", "sphere") not in ("sphere", "box"):
            raise ValueError("place_obstacle.shape must be sphere or box")
        if not isinstance(event.get("radius", 0.2), (int, float)):
            raise ValueError("place_obstacle.radius must be a number")
    elif kind == "remove_obstacle":
        if not isinstance(event.get("id"), int):
            raise ValueError("remove_obstacle.id must be an integer")
    elif kind == "push":
        need("hip", 3)
        if not isinstance(event.get("body_id"), int):
            raise ValueError("push.body_id must be an integer")
    return event
