"""Ground-plane occupancy grid and RRT path planning with replanning.

The grid discretizes world (x, y). Surface voxels whose height above the
fitted ground plane falls in the obstacle band mark cells Occupied; columns
with any observation are Free; everything else is Unknown and treated as
traversable (the robot explores unmapped space by design). Planning runs
against the occupancy inflated by the robot radius plus half a cell diagonal
so that any returned path keeps true clearance.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import time

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .errors import GoalOccupied, NoGroundPlane, StartOccupied, Unreachable
from .tsdf import GroundPlane, TsdfVolume

DEFAULT_CELL_SIZE = 0.05
DEFAULT_INFLATION = 0.30
HEIGHT_BAND = (0.05, 0.60)


class CellState(enum.IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


@dataclasses.dataclass
class OccupancyGrid:
    """2D grid over the ground plane, indexed [ix, iy]."""

    origin: NDArray[np.float64]  # world xy of cell (0, 0) lower corner
    cell_size: float
    states: NDArray[np.int8]
    inflation_radius: float
    inflated: NDArray[np.bool_]  # occupancy dilated by the robot disc

    @property
    def shape(self) -> tuple[int, int]:
        return self.states.shape

    def world_to_cell(self, xy) -> tuple[int, int]:
        xy = np.asarray(xy, dtype=np.float64)
        c = np.floor((xy - self.origin) / self.cell_size).astype(int)
        return int(c[0]), int(c[1])

    def cell_center(self, ix: int, iy: int) -> NDArray[np.float64]:
        return self.origin + (np.array([ix, iy]) + 0.5) * self.cell_size

    def in_bounds(self, xy) -> bool:
        ix, iy = self.world_to_cell(xy)
        return 0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]

    def blocked(self, xy) -> bool:
        """Inflated-occupancy test; out-of-bounds counts as blocked."""
        ix, iy = self.world_to_cell(xy)
        if not (0 <= ix < self.shape[0] and 0 <= iy < self.shape[1]):
            return True
        return bool(self.inflated[ix, iy])

    def blocked_many(self, pts: NDArray) -> NDArray[np.bool_]:
        pts = np.asarray(pts, dtype=np.float64)
        c = np.floor((pts - self.origin) / self.cell_size).astype(int)
        out = np.ones(len(pts), dtype=bool)
        ok = ((c[:, 0] >= 0) & (c[:, 0] < self.shape[0])
              & (c[:, 1] >= 0) & (c[:, 1] < self.shape[1]))
        out[ok] = self.inflated[c[ok, 0], c[ok, 1]]
        return out

    def segment_free(self, a, b) -> bool:
        """Collision check by rasterizing the segment at half-cell spacing."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        length = float(np.linalg.norm(b - a))
        n = max(2, int(np.ceil(length / (self.cell_size * 0.5))) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        return not self.blocked_many(pts).any()

    def occupied_cell_centers(self) -> NDArray[np.float64]:
        idx = np.argwhere(self.states == CellState.OCCUPIED)
        return self.origin[None, :] + (idx + 0.5) * self.cell_size

    def to_json(self) -> dict:
        """Run-length encoded cells plus geometry, row-major over ix."""
        flat = self.states.ravel()
        runs = []
        start = 0
        for i in range(1, len(flat) + 1):
            if i == len(flat) or flat[i] != flat[start]:
                runs.append([int(flat[start]), i - start])
                start = i
        return {
            "origin": [float(self.origin[0]), float(self.origin[1])],
            "cell_size": self.cell_size,
            "shape": list(self.shape),
            "inflation_radius": self.inflation_radius,
            "cells_rle": runs,
        }

    @classmethod
    def from_json(cls, data: dict) -> "OccupancyGrid":
        shape = tuple(data["shape"])
        flat = np.empty(shape[0] * shape[1], dtype=np.int8)
        pos = 0
        for state, count in data["cells_rle"]:
            flat[pos:pos + count] = state
            pos += count
        states = flat.reshape(shape)
        grid = cls(origin=np.asarray(data["origin"], dtype=np.float64),
                   cell_size=float(data["cell_size"]), states=states,
                   inflation_radius=float(data["inflation_radius"]),
                   inflated=np.zeros(shape, dtype=bool))
        grid.inflated = _inflate(states == CellState.OCCUPIED,
                                 grid.cell_size, grid.inflation_radius)
        return grid


@dataclasses.dataclass(frozen=True)
class VirtualObstacle:
    """User-placed obstacle on the ground plane."""

    id: int
    shape: str  # "sphere" | "box"
    position: NDArray[np.float64]  # world xy
    footprint: float  # radius in meters
    half_extents: NDArray[np.float64] | None = None

    def __post_init__(self):
        if self.footprint <= 0:
            raise ValueError("footprint must be positive")


@dataclasses.dataclass
class PathPlan:
    waypoints: NDArray[np.float64]  # (N, 2)
    created_at: float  # ms
    cost: float

    def to_json(self) -> dict:
        return {"created_at": self.created_at, "cost": self.cost,
                "waypoints": [[float(x), float(y)] for x, y in self.waypoints]}

    @classmethod
    def from_json(cls, data: dict) -> "PathPlan":
        return cls(waypoints=np.asarray(data["waypoints"], dtype=np.float64),
                   created_at=float(data["created_at"]),
                   cost=float(data["cost"]))


def path_length(waypoints: NDArray) -> float:
    waypoints = np.asarray(waypoints, dtype=np.float64)
    if len(waypoints) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum())


def _inflate(occupied: NDArray, cell_size: float, radius: float) -> NDArray:
    if not occupied.any():
        return np.zeros_like(occupied, dtype=bool)
    dist = ndimage.distance_transform_edt(~occupied) * cell_size
    # half-diagonal margin absorbs rasterization of the query point
    return dist <= radius + cell_size * np.sqrt(2.0) / 2.0


def build_occupancy(volume: TsdfVolume, ground: GroundPlane | None,
                    obstacles=(), cell_size: float = DEFAULT_CELL_SIZE,
                    inflation_radius: float = DEFAULT_INFLATION,
                    bounds=None, height_band=HEIGHT_BAND) -> OccupancyGrid:
    """Project the fused surface and virtual obstacles onto a ground grid."""
    if ground is None:
        raise NoGroundPlane("occupancy needs a fitted ground plane")
    if bounds is None:
        lo = volume.origin[:2]
        hi = volume.origin[:2] + volume.extent
    else:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
    shape = tuple(np.maximum(1, np.ceil((hi - lo) / cell_size)).astype(int))
    states = np.full(shape, CellState.UNKNOWN, dtype=np.int8)

    observed = np.argwhere(volume.weight > 0)
    if observed.shape[0]:
        centers = volume.origin[None, :] + (observed + 0.5) * volume.voxel_size
        heights = ground.height_of(centers)
        cells = np.floor((centers[:, :2] - lo[None, :]) / cell_size).astype(int)
        ok = ((cells[:, 0] >= 0) & (cells[:, 0] < shape[0])
              & (cells[:, 1] >= 0) & (cells[:, 1] < shape[1]))
        states[cells[ok, 0], cells[ok, 1]] = CellState.FREE

        shell = volume.voxel_size / volume.truncation
        tsdf_vals = volume.tsdf[observed[:, 0], observed[:, 1], observed[:, 2]]
        occ = (np.abs(tsdf_vals) <= shell) & (heights >= height_band[0]) \
            & (heights <= height_band[1]) & ok
        states[cells[occ, 0], cells[occ, 1]] = CellState.OCCUPIED

    # rasterize virtual obstacle footprints
    nx, ny = shape
    gx = lo[0] + (np.arange(nx) + 0.5) * cell_size
    gy = lo[1] + (np.arange(ny) + 0.5) * cell_size
    for obs in obstacles:
        if obs.shape == "box" and obs.half_extents is not None:
            mask_x = np.abs(gx - obs.position[0]) <= obs.half_extents[0]
            mask_y = np.abs(gy - obs.position[1]) <= obs.half_extents[1]
            states[np.ix_(mask_x, mask_y)] = CellState.OCCUPIED
        else:
            d2 = ((gx[:, None] - obs.position[0]) ** 2
                  + (gy[None, :] - obs.position[1]) ** 2)
            states[d2 <= obs.footprint ** 2] = CellState.OCCUPIED

    inflated = _inflate(states == CellState.OCCUPIED, cell_size,
                        inflation_radius)
    return OccupancyGrid(origin=lo.copy(), cell_size=cell_size, states=states,
                         inflation_radius=inflation_radius, inflated=inflated)


@dataclasses.dataclass(frozen=True)
class RrtParams:
    step: float = 0.15
    goal_bias: float = 0.05
    max_iters: int = 20_000
    seed: int = 0
    smooth_attempts: int = 100


def _densify(points: NDArray, max_spacing: float) -> NDArray:
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        d = float(np.linalg.norm(b - a))
        n = max(1, int(np.ceil(d / max_spacing)))
        for i in range(1, n + 1):
            out.append(a + (b - a) * i / n)
    return np.asarray(out)


def rrt_plan(grid: OccupancyGrid, start, goal,
             params: RrtParams = RrtParams(),
             created_at_ms: float = 0.0) -> PathPlan:
    """Rapidly-exploring random tree with goal bias and shortcut smoothing.

    Deterministic under a fixed seed. Raises StartOccupied / GoalOccupied for
    blocked endpoints and Unreachable when the iteration budget runs out.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if grid.blocked(start):
        raise StartOccupied(f"start {start.tolist()} in occupied space")
    if np.linalg.norm(goal - start) < 1e-12:
        return PathPlan(waypoints=start[None, :].copy(),
                        created_at=created_at_ms, cost=0.0)
    if grid.blocked(goal):
        raise GoalOccupied(f"goal {goal.tolist()} in occupied space")

    rng = np.random.default_rng(params.seed)
    lo = grid.origin
    hi = grid.origin + np.array(grid.shape) * grid.cell_size
    nodes = np.empty((params.max_iters + 2, 2))
    parents = np.empty(params.max_iters + 2, dtype=np.int64)
    nodes[0] = start
    parents[0] = -1
    count = 1
    goal_idx = -1

    for _ in range(params.max_iters):
        if rng.random() < params.goal_bias:
            target = goal
        else:
            target = rng.uniform(lo, hi)
        d2 = np.sum((nodes[:count] - target[None, :]) ** 2, axis=1)
        near = int(np.argmin(d2))
        delta = target - nodes[near]
        dist = float(np.linalg.norm(delta))
        if dist < 1e-12:
            continue
        new = target if dist <= params.step else (
            nodes[near] + delta * (params.step / dist))
        if not grid.segment_free(nodes[near], new):
            continue
        nodes[count] = new
        parents[count] = near
        count += 1
        if (np.linalg.norm(new - goal) <= params.step
                and grid.segment_free(new, goal)):
            nodes[count] = goal
            parents[count] = count - 1
            goal_idx = count
            count += 1
            break
    if goal_idx < 0:
        raise Unreachable(f"no path after {params.max_iters} iterations")

    chain = []
    i = goal_idx
    while i >= 0:
        chain.append(nodes[i])
        i = parents[i]
    path = np.asarray(chain[::-1])

    # shortcut smoothing: straight-line splice when collision-free
    for _ in range(params.smooth_attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.integers(0, len(path), size=2))
        if j - i < 2:
            continue
        if grid.segment_free(path[i], path[j]):
            path = np.concatenate([path[:i + 1], path[j:]], axis=0)

    path = _densify(path, 2.0 * params.step)
    return PathPlan(waypoints=path, created_at=created_at_ms,
                    cost=path_length(path))


def path_blocked(plan: PathPlan, grid: OccupancyGrid, robot_xy) -> bool:
    """True when any remaining path segment intersects inflated occupancy."""
    wps = plan.waypoints
    if len(wps) == 0:
        return False
    robot_xy = np.asarray(robot_xy, dtype=np.float64)
    nearest = int(np.argmin(np.sum((wps - robot_xy[None, :]) ** 2, axis=1)))
    if not grid.segment_free(robot_xy, wps[nearest]):
        return True
    for a, b in zip(wps[nearest:-1], wps[nearest + 1:]):
        if not grid.segment_free(a, b):
            return True
    return False


def replan_if_blocked(plan: PathPlan, grid: OccupancyGrid, robot_xy,
                      params: RrtParams = RrtParams(),
                      created_at_ms: float = 0.0):
    """Replan from the robot pose when the remaining path hits occupancy.

    Returns (plan, replanned, tr_seconds); tr is the wall-clock replanning
    time, 0.0 when the plan was kept.
    """
    if not path_blocked(plan, grid, robot_xy):
        return plan, False, 0.0
    goal = plan.waypoints[-1]
    t0 = time.perf_counter()
    new_plan = rrt_plan(grid, robot_xy, goal, params, created_at_ms)
    tr = time.perf_counter() - t0
    return new_plan, True, tr


def export_plan_json(grid: OccupancyGrid, plan: PathPlan | None, path) -> None:
    payload = {"grid": grid.to_json()}
    if plan is not None:
        payload["path"] = plan.to_json()
    with open(path, "w") as fh:
        json.dump(payload, fh)
