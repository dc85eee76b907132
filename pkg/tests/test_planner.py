"""Occupancy and RRT tests: clearance oracles, determinism, smoothing."""

import numpy as np
import pytest

from telehaptic.camera import look_at
from telehaptic.errors import GoalOccupied, NoGroundPlane, StartOccupied, Unreachable
from telehaptic.planner import (CellState, OccupancyGrid, PathPlan, RrtParams,
                                VirtualObstacle, build_occupancy, path_blocked,
                                path_length, replan_if_blocked, rrt_plan)
from telehaptic.tsdf import GroundPlane, TsdfVolume, auto_volume, integrate_frame

from conftest import OracleBox, OraclePlane, render_oracle

FLAT_GROUND = GroundPlane(normal=np.array([0.0, 0.0, 1.0]), offset=0.0,
                          fitted_from=10)


def empty_grid(extent=6.4, cell=0.05, inflation=0.30):
    n = int(extent / cell)
    states = np.full((n, n), CellState.FREE, dtype=np.int8)
    return OccupancyGrid(origin=np.array([0.0, 0.0]), cell_size=cell,
                         states=states, inflation_radius=inflation,
                         inflated=np.zeros((n, n), dtype=bool))


def grid_with_disc(center, radius, **kwargs):
    grid = empty_grid(**kwargs)
    from telehaptic.planner import _inflate
    nx, ny = grid.shape
    gx = grid.origin[0] + (np.arange(nx) + 0.5) * grid.cell_size
    gy = grid.origin[1] + (np.arange(ny) + 0.5) * grid.cell_size
    d2 = (gx[:, None] - center[0]) ** 2 + (gy[None, :] - center[1]) ** 2
    grid.states[d2 <= radius ** 2] = CellState.OCCUPIED
    grid.inflated = _inflate(grid.states == CellState.OCCUPIED,
                             grid.cell_size, grid.inflation_radius)
    return grid


class TestBuildOccupancy:
    def fuse_scene(self, intrinsics, prims):
        pose = look_at((-0.2, 0.0, 1.1), (0.9, 0.0, 0.0))
        frame = render_oracle(prims, pose, intrinsics)
        vol = auto_volume(pose, resolution=128, voxel_size=0.01,
                          depth_min=intrinsics.depth_min)
        for _ in range(5):
            integrate_frame(vol, frame, intrinsics)
        return vol

    def test_requires_ground(self, intrinsics):
        vol = TsdfVolume(resolution=64)
        with pytest.raises(NoGroundPlane):
            build_occupancy(vol, None)

    def test_empty_floor_all_observed_cells_free(self, intrinsics):
        vol = self.fuse_scene(intrinsics,
                              [OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0)])
        grid = build_occupancy(vol, FLAT_GROUND)
        assert (grid.states != CellState.OCCUPIED).all()
        assert (grid.states == CellState.FREE).sum() > 100

    def test_box_occupies_footprint_with_inflation_ring(self, intrinsics):
        box = OracleBox(np.array([0.6, -0.2, 0.0]), np.array([1.0, 0.2, 0.3]))
        vol = self.fuse_scene(intrinsics,
                              [OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0), box])
        grid = build_occupancy(vol, FLAT_GROUND)
        occupied = grid.occupied_cell_centers()
        assert occupied.shape[0] >= 8
        # occupied cells hug the box footprint (frontal faces are what the
        # camera sees; allow one cell of slack)
        pad = grid.cell_size
        assert (occupied[:, 0] >= 0.6 - pad).all()
        assert (occupied[:, 0] <= 1.0 + pad).all()
        assert (np.abs(occupied[:, 1]) <= 0.2 + pad).all()
        # inflation superset of raw occupancy
        raw = grid.states == CellState.OCCUPIED
        assert (grid.inflated | raw == grid.inflated).all()
        # a point one robot radius from the footprint is blocked
        assert grid.blocked((0.6 - 0.15, 0.0))

    def test_virtual_sphere_rasterized(self, intrinsics):
        vol = self.fuse_scene(intrinsics,
                              [OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0)])
        obstacle = VirtualObstacle(id=1, shape="sphere",
                                   position=np.array([1.0, 0.0]),
                                   footprint=0.2)
        grid = build_occupancy(vol, FLAT_GROUND, [obstacle])
        assert grid.blocked((1.0, 0.0))
        assert grid.blocked((1.0, 0.2 + 0.29))  # inside inflation ring
        assert not grid.blocked((1.0, 0.2 + 0.40))

    def test_obstacle_removal_restores_grid(self, intrinsics):
        vol = self.fuse_scene(intrinsics,
                              [OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0)])
        base = build_occupancy(vol, FLAT_GROUND, [])
        obstacle = VirtualObstacle(id=1, shape="sphere",
                                   position=np.array([1.0, 0.3]), footprint=0.2)
        with_obs = build_occupancy(vol, FLAT_GROUND, [obstacle])
        after = build_occupancy(vol, FLAT_GROUND, [])
        assert (with_obs.states != base.states).any()
        np.testing.assert_array_equal(after.states, base.states)
        np.testing.assert_array_equal(after.inflated, base.inflated)


class TestRrt:
    def test_straight_corridor_near_optimal(self):
        grid = empty_grid()
        plan = rrt_plan(grid, (0.5, 0.5), (3.5, 0.5), RrtParams(seed=4))
        assert plan.cost <= 1.2 * 3.0
        assert np.linalg.norm(plan.waypoints[0] - [0.5, 0.5]) < 1e-9
        assert np.linalg.norm(plan.waypoints[-1] - [3.5, 0.5]) < 1e-9

    def test_start_equals_goal(self):
        grid = empty_grid()
        plan = rrt_plan(grid, (1.0, 1.0), (1.0, 1.0))
        assert plan.cost == 0.0
        assert plan.waypoints.shape == (1, 2)

    def test_goal_in_obstacle(self):
        grid = grid_with_disc((2.0, 2.0), 0.3)
        with pytest.raises(GoalOccupied):
            rrt_plan(grid, (0.5, 0.5), (2.0, 2.0))

    def test_start_in_obstacle(self):
        grid = grid_with_disc((2.0, 2.0), 0.3)
        with pytest.raises(StartOccupied):
            rrt_plan(grid, (2.0, 2.0), (0.5, 0.5))

    def test_unreachable_when_walled_off(self):
        grid = empty_grid()
        from telehaptic.planner import _inflate
        mid = grid.shape[0] // 2
        grid.states[mid - 1:mid + 1, :] = CellState.OCCUPIED
        grid.inflated = _inflate(grid.states == CellState.OCCUPIED,
                                 grid.cell_size, grid.inflation_radius)
        with pytest.raises(Unreachable):
            rrt_plan(grid, (0.5, 0.5), (5.5, 5.5), RrtParams(max_iters=800))

    def test_deterministic_under_fixed_seed(self):
        grid = grid_with_disc((2.0, 2.0), 0.4)
        p1 = rrt_plan(grid, (0.5, 0.5), (4.5, 4.0), RrtParams(seed=11))
        p2 = rrt_plan(grid, (0.5, 0.5), (4.5, 4.0), RrtParams(seed=11))
        np.testing.assert_array_equal(p1.waypoints, p2.waypoints)
        assert p1.cost == p2.cost

    def test_path_collision_free_and_spaced(self):
        grid = grid_with_disc((2.0, 2.0), 0.4)
        params = RrtParams(seed=3)
        plan = rrt_plan(grid, (0.5, 0.5), (4.0, 3.5), params)
        for a, b in zip(plan.waypoints[:-1], plan.waypoints[1:]):
            assert grid.segment_free(a, b)
            assert np.linalg.norm(b - a) <= 2 * params.step + 1e-9
        assert not grid.blocked_many(plan.waypoints).any()

    def test_smoothing_never_increases_cost(self):
        grid = grid_with_disc((2.0, 2.0), 0.4)
        raw = rrt_plan(grid, (0.5, 0.5), (4.0, 3.5),
                       RrtParams(seed=5, smooth_attempts=0))
        smooth = rrt_plan(grid, (0.5, 0.5), (4.0, 3.5),
                          RrtParams(seed=5, smooth_attempts=100))
        assert smooth.cost <= raw.cost + 1e-9

    def test_clearance_at_least_robot_radius(self):
        grid = grid_with_disc((2.0, 2.0), 0.4)
        plan = rrt_plan(grid, (0.5, 2.0), (3.8, 2.0), RrtParams(seed=9))
        occupied = grid.occupied_cell_centers()
        dense = []
        for a, b in zip(plan.waypoints[:-1], plan.waypoints[1:]):
            for t in np.linspace(0, 1, 10):
                dense.append(a + t * (b - a))
        dense = np.asarray(dense)
        d = np.linalg.norm(dense[:, None, :] - occupied[None, :, :], axis=2)
        assert d.min() >= grid.inflation_radius


class TestReplan:
    def test_obstacle_on_path_triggers_replan(self):
        grid = empty_grid()
        plan = rrt_plan(grid, (0.5, 2.0), (5.0, 2.0), RrtParams(seed=2))
        blocked_grid = grid_with_disc((2.5, 2.0), 0.3)
        new_plan, replanned, tr = replan_if_blocked(plan, blocked_grid,
                                                    (1.0, 2.0),
                                                    RrtParams(seed=2))
        assert replanned
        assert tr > 0.0
        occupied = blocked_grid.occupied_cell_centers()
        for wp in new_plan.waypoints:
            d = np.linalg.norm(occupied - wp[None, :], axis=1)
            assert d.min() >= blocked_grid.inflation_radius

    def test_far_obstacle_keeps_plan(self):
        grid = empty_grid()
        plan = rrt_plan(grid, (0.5, 2.0), (5.0, 2.0), RrtParams(seed=2))
        off_grid = grid_with_disc((2.5, 5.5), 0.3)
        same, replanned, tr = replan_if_blocked(plan, off_grid, (1.0, 2.0))
        assert not replanned
        assert tr == 0.0
        assert same is plan

    def test_sealed_corridor_unreachable(self):
        grid = empty_grid()
        plan = rrt_plan(grid, (0.5, 2.0), (5.0, 2.0), RrtParams(seed=2))
        from telehaptic.planner import _inflate
        sealed = empty_grid()
        mid = sealed.shape[0] // 2
        sealed.states[mid - 1:mid + 1, :] = CellState.OCCUPIED
        sealed.inflated = _inflate(sealed.states == CellState.OCCUPIED,
                                   sealed.cell_size, sealed.inflation_radius)
        with pytest.raises(Unreachable):
            replan_if_blocked(plan, sealed, (1.0, 2.0),
                              RrtParams(max_iters=800))


class TestSerialization:
    def test_grid_rle_roundtrip(self):
        grid = grid_with_disc((2.0, 2.0), 0.4)
        data = grid.to_json()
        back = OccupancyGrid.from_json(data)
        np.testing.assert_array_equal(back.states, grid.states)
        np.testing.assert_array_equal(back.inflated, grid.inflated)
        assert back.cell_size == grid.cell_size

    def test_path_json_roundtrip(self):
        plan = PathPlan(waypoints=np.array([[0.0, 0.0], [1.0, 2.0]]),
                        created_at=12.0, cost=path_length([[0, 0], [1, 2]]))
        back = PathPlan.from_json(plan.to_json())
        np.testing.assert_allclose(back.waypoints, plan.waypoints)
        assert back.cost == pytest.approx(plan.cost)
