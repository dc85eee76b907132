"""Scenario orchestration: the full loop under a deterministic virtual clock.

A scenario wires the simulated robot to the server stack through delayed
in-process channels: the robot renders RGBD frames and odometry at the frame
rate and executes the latest received command; the server fuses an initial
burst of frames, fits the ground plane, builds occupancy, parses scripted
interface events into tasks, plans and replans with RRT, estimates the
round-trip time from pings, and compensates latency by commanding against
the predicted robot position.

Everything that lands in the deterministic artifact set (run_metrics.csv,
prediction_trace.csv, path.json, haptic traces) is derived from the virtual
clock and seeded RNGs only, so two runs of the same config are bit-identical.
Wall-clock planning and replanning durations go to table3_metrics.csv and
timings.csv, which are excluded from the bit-identity contract.

Goal selection note: the marking point versus path point rule picks the
planning target (the farther candidate by default); the robot always tracks
the planned, collision-checked path toward whichever target won.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from . import control as ctl
from . import interact, planner, segment, simworld
from .camera import CameraIntrinsics, DEFAULT_INTRINSICS
from .errors import ScenarioFailed, Unreachable
from .netstream import (ChannelPair, DelayModel, Fixed, RttEstimator,
                        VirtualClock, decode_frame, encode_frame)
from .tsdf import (TsdfVolume, detect_ground_plane, integrate_frame, raycast,
                   surface_voxel_mask)

SCHEMA_VERSION = 1


@dataclasses.dataclass
class ScenarioConfig:
    scene: simworld.Scene
    delay: DelayModel = Fixed(0.0)
    resolution: int = 128
    voxel_size: float | None = None
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    predictor_window: int = 5
    seed: int = 0
    fps: float = 20.0
    control_rate: float = 20.0
    sim_rate: float = 200.0
    v_max: float = 0.3
    k_p: float = 1.0
    goal_tolerance: float = 0.1
    arrival_tolerance: float = 0.05
    accel_limit: float = 0.8  # m/s^2 velocity slew of the simulated base
    robot_radius: float = 0.30
    cell_size: float = 0.05
    fusion_frames: int = 12
    ground_frames: int = 6
    predictor_warmup: int = 12  # moving velocity samples before trusting the fit
    max_duration_s: float = 120.0
    start_pose: tuple = (0.5, 0.5, 0.0)
    odom_sigma: float = 0.0
    events: list = dataclasses.field(default_factory=list)
    virtual_bodies: list = dataclasses.field(default_factory=list)
    align_heading: bool = False
    prefer_nearest_goal: bool = False
    rrt: planner.RrtParams = dataclasses.field(
        default_factory=lambda: planner.RrtParams())


@dataclasses.dataclass
class ScenarioResult:
    completed: bool
    te_s: float
    lp_m: float
    goal_error_m: float | None
    replanned: bool
    min_clearance_m: float | None
    prediction_mean_x_err: float | None
    prediction_max_x_err: float | None
    plan_times: list
    replan_times: list
    artifacts: dict
    truth_xy: np.ndarray
    executed_goal: np.ndarray | None


def scenario_volume(config: ScenarioConfig) -> TsdfVolume:
    """Volume sized to cover the scene at the configured grid resolution."""
    bounds = config.scene.bounds
    span = float(max(bounds[1][0] - bounds[0][0], bounds[1][1] - bounds[0][1]))
    vs = config.voxel_size or span / config.resolution
    origin = np.array([bounds[0][0], bounds[0][1], -0.5])
    return TsdfVolume(config.resolution, vs, max(5 * vs, 0.05), origin)


def _nearest_free(grid: planner.OccupancyGrid, goal: np.ndarray) -> np.ndarray:
    """Closest inflated-free cell center to a desired (possibly blocked) goal."""
    if not grid.blocked(goal):
        return goal
    free = np.argwhere(~grid.inflated)
    if free.shape[0] == 0:
        raise Unreachable("no free cell for the goal")
    centers = grid.origin[None, :] + (free + 0.5) * grid.cell_size
    return centers[int(np.argmin(np.linalg.norm(centers - goal[None, :],
                                                axis=1)))]


class _ServerState:
    """Execution-layer state across control ticks."""

    def __init__(self, config: ScenarioConfig):
        self.volume = scenario_volume(config)
        self.ground = None
        self.grid = None
        self.plan: planner.PathPlan | None = None
        self.plan_goal = None
        self.waypoint_idx = 0
        self.marking: interact.MarkingPath | None = None
        self.marking_idx = 0
        self.obstacles: dict[int, planner.VirtualObstacle] = {}
        self.bodies: dict[int, interact.VirtualBody] = {
            b.id: b for b in config.virtual_bodies}
        self.predictor = ctl.PredictorModel(window=config.predictor_window)
        self.moving_samples = 0
        self.rtt = RttEstimator()
        self.frames_fused = 0
        self.burst: list = []
        self.last_frame = None
        self.last_odo = None
        self.last_odo_t = 0.0
        self.task_done = False
        self.next_obstacle_id = 1

    def build_grid(self, config: ScenarioConfig,
                   exclude_body: int | None = None) -> planner.OccupancyGrid:
        obstacles = list(self.obstacles.values()) + [
            interact.body_as_obstacle(b) for b in self.bodies.values()
            if b.id != exclude_body]
        return planner.build_occupancy(
            self.volume, self.ground, obstacles, cell_size=config.cell_size,
            inflation_radius=config.robot_radius,
            bounds=(config.scene.bounds[0][:2], config.scene.bounds[1][:2]))

    def rebuild_grid(self, config: ScenarioConfig):
        self.grid = self.build_grid(config)


def run_scenario(config: ScenarioConfig, out_dir) -> ScenarioResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clock = VirtualClock()
    rng = np.random.default_rng(config.seed)
    pair = ChannelPair(config.delay, clock)
    intr = config.intrinsics

    robot = simworld.SimRobot(x=config.start_pose[0], y=config.start_pose[1],
                              heading=config.start_pose[2],
                              odom_sigma=config.odom_sigma,
                              v_max=config.v_max,
                              accel_limit=config.accel_limit)
    server = _ServerState(config)

    sim_dt = 1.0 / config.sim_rate
    frame_period = 1.0 / config.fps
    control_period = 1.0 / config.control_rate
    ping_period = 0.5
    next_frame = 0.0
    next_control = 0.0
    next_ping = 0.0
    seq = 0
    cmd_seq = 0
    latest_cmd = ctl.ZERO_COMMAND
    events = sorted(config.events, key=lambda e: e[0])
    event_idx = 0

    truth_log = []  # (t_s, x, y)
    odo_log = []
    prediction_rows = []  # (target_t_ms, predicted_x, predicted_y)
    plan_times: list[float] = []
    replan_times: list[float] = []
    replanned_any = False
    fuse_wall = 0.0
    completion_t = None
    final_goal = None

    def plan_to(goal_xy, now_ms):
        nonlocal final_goal
        goal = _nearest_free(server.grid, np.asarray(goal_xy, dtype=np.float64))
        t0 = time.perf_counter()
        plan = planner.rrt_plan(server.grid, server.last_odo[:2], goal,
                                dataclasses.replace(config.rrt,
                                                    seed=config.seed + 17),
                                created_at_ms=now_ms)
        plan_times.append(time.perf_counter() - t0)
        server.plan = plan
        server.plan_goal = goal
        server.waypoint_idx = 0
        final_goal = goal

    t_end = config.max_duration_s
    while clock.now() < t_end:
        now = clock.now()
        truth_log.append((now, robot.x, robot.y))

        # ---- robot side -----------------------------------------------
        for msg in pair.downlink.poll():
            kind = msg[0]
            if kind == "ping":
                pair.uplink.send(("pong", msg[1]))
            elif kind == "cmd":
                payload = ctl.decode_command(msg[1])
                latest_cmd = ctl.VelocityCommand(*payload["cmd"])
        robot = simworld.robot_step(robot, latest_cmd, sim_dt, rng)
        if now >= next_frame:
            seq += 1
            cam = robot.camera_pose()
            frame = simworld.render_frame(config.scene, cam, intr, seq=seq,
                                          timestamp_ms=int(round(now * 1000)))
            pair.uplink.send(("frame", encode_frame(frame)))
            pair.uplink.send(("odo", {"t_ms": int(round(now * 1000)),
                                      "x": robot.odom_x, "y": robot.odom_y,
                                      "heading": robot.odom_heading}))
            next_frame += frame_period

        # ---- server side ----------------------------------------------
        for msg in pair.uplink.poll():
            kind = msg[0]
            if kind == "pong":
                server.rtt.add_sample(now - msg[1], now)
            elif kind == "frame":
                frame = decode_frame(msg[1])
                server.last_frame = frame
                if server.frames_fused < config.fusion_frames:
                    t0 = time.perf_counter()
                    integrate_frame(server.volume, frame, intr)
                    fuse_wall += time.perf_counter() - t0
                    server.frames_fused += 1
                    server.burst.append(frame)
                    if (server.ground is None
                            and len(server.burst) >= config.ground_frames):
                        server.ground = detect_ground_plane(
                            server.burst, intr, seed=config.seed)
                        server.rebuild_grid(config)
            elif kind == "odo":
                odo = msg[1]
                odo_log.append(odo)
                if server.last_odo is not None:
                    dt_odo = (odo["t_ms"] - server.last_odo_t) * 1e-3
                    if dt_odo > 0:
                        v_sample = (
                            (odo["x"] - server.last_odo[0]) / dt_odo,
                            (odo["y"] - server.last_odo[1]) / dt_odo,
                            ctl.wrap_angle(odo["heading"] - server.last_odo[2])
                            / dt_odo)
                        server.predictor.push(v_sample)
                        if np.hypot(v_sample[0], v_sample[1]) > 0.02:
                            server.moving_samples += 1
                server.last_odo = np.array([odo["x"], odo["y"],
                                            odo["heading"]])
                server.last_odo_t = odo["t_ms"]

        if now >= next_ping:
            pair.downlink.send(("ping", now))
            next_ping += ping_period

        if now >= next_control and server.last_odo is not None:
            now_ms = now * 1000.0
            # scripted interface events
            while event_idx < len(events) and events[event_idx][0] <= now:
                _apply_event(events[event_idx][1], server, config, now_ms,
                             plan_to, replan_times)
                replanned_any = replanned_any or getattr(
                    server, "_replanned_flag", False)
                event_idx += 1

            if server.grid is not None and server.plan is not None:
                rtt = server.rtt.estimate or 0.0
                server.predictor.fit()
                history = np.asarray(server.predictor.history) \
                    if len(server.predictor.history) else np.zeros((1, 3))
                recent = history[-(server.predictor.window + 1):, :2]
                if (server.predictor.ready
                        and server.moving_samples >= config.predictor_warmup):
                    v_hat = server.predictor.predict_velocity()[:2]
                else:
                    v_hat = recent[-1].copy()  # velocity dead reckoning
                # trust region: accelerations are bounded, so the predicted
                # velocity cannot leave the recent envelope by more than a*t
                margin = (config.accel_limit * rtt
                          if np.isfinite(config.accel_limit) else 0.1)
                v_hat = np.clip(v_hat, recent.min(axis=0) - margin,
                                recent.max(axis=0) + margin)
                speed = float(np.linalg.norm(v_hat))
                if speed > config.v_max:
                    v_hat *= config.v_max / speed
                predicted = server.last_odo[:2] + v_hat * rtt
                target_ms = server.last_odo_t + rtt * 1000.0
                prediction_rows.append((target_ms, float(predicted[0]),
                                        float(predicted[1])))

                # waypoint bookkeeping against fresh odometry
                wps = server.plan.waypoints
                while (server.waypoint_idx < len(wps) - 1
                       and np.linalg.norm(wps[server.waypoint_idx]
                                          - server.last_odo[:2])
                       <= config.arrival_tolerance):
                    server.waypoint_idx += 1
                target_wp = wps[min(server.waypoint_idx, len(wps) - 1)]

                # marking vs planned-goal selection drives the planning target;
                # markings are consumed on proximity or once the robot is
                # closer to the route end than the mark itself (a blocked mark
                # must not drag the robot backwards)
                mark_pt = None
                if (server.marking is not None
                        and server.marking_idx < len(server.marking.xy)):
                    mark_xy = server.marking.xy
                    route_end = mark_xy[-1]
                    odo_xy_now = server.last_odo[:2]
                    while server.marking_idx < len(mark_xy):
                        m = mark_xy[server.marking_idx]
                        reached = (np.linalg.norm(m - odo_xy_now)
                                   <= config.goal_tolerance)
                        passed = (np.linalg.norm(odo_xy_now - route_end)
                                  < np.linalg.norm(m - route_end) - 0.05)
                        if reached or passed:
                            server.marking_idx += 1
                        else:
                            break
                    if server.marking_idx < len(mark_xy):
                        mark_pt = mark_xy[server.marking_idx]
                if mark_pt is not None:
                    chosen = ctl.select_goal(mark_pt, server.plan_goal,
                                             server.last_odo[:2],
                                             config.prefer_nearest_goal)
                    if (np.linalg.norm(chosen - server.plan_goal)
                            > max(0.2, config.goal_tolerance)):
                        plan_to(chosen, now_ms)
                        wps = server.plan.waypoints
                        target_wp = wps[min(server.waypoint_idx,
                                            len(wps) - 1)]

                state = ctl.RobotState(float(predicted[0]),
                                       float(predicted[1]),
                                       float(server.last_odo[2]))
                cmd, _ = ctl.trajectory_step(
                    state, target_wp, control_period, k_p=config.k_p,
                    v_max=config.v_max,
                    arrival_tol=config.arrival_tolerance,
                    align_heading=config.align_heading)
                cmd_seq += 1
                pair.downlink.send(("cmd", ctl.encode_command(
                    cmd_seq, now_ms, target_wp, cmd)))

                # task completion against the final goal
                goal_err = np.linalg.norm(server.plan_goal
                                          - server.last_odo[:2])
                at_last = server.waypoint_idx >= len(wps) - 1
                if (mark_pt is None and at_last
                        and goal_err <= config.goal_tolerance
                        and not server.task_done):
                    server.task_done = True
                    completion_t = now
            next_control += control_period

        if server.task_done and pair.downlink.pending() == 0:
            # drain one extra second so the robot consumes the stop command
            if completion_t is not None and now - completion_t > 1.0:
                break
        clock.advance(sim_dt)

    te = completion_t if completion_t is not None else clock.now()
    odo_xy = np.array([[o["x"], o["y"]] for o in odo_log]) if odo_log else \
        np.zeros((0, 2))
    lp = float(np.linalg.norm(np.diff(odo_xy, axis=0), axis=1).sum()) \
        if len(odo_xy) >= 2 else 0.0
    truth = np.asarray(truth_log)

    goal_error = None
    if final_goal is not None:
        goal_error = float(np.linalg.norm(truth[-1, 1:3] - final_goal))

    min_clearance = None
    if server.grid is not None:
        occupied = server.grid.occupied_cell_centers()
        if occupied.shape[0]:
            d = np.linalg.norm(truth[:, 1:3][:, None, :]
                               - occupied[None, :, :], axis=2)
            min_clearance = float(d.min())

    # join predictions with the truth log
    pred_stats = (None, None)
    trace_path = out_dir / "prediction_trace.csv"
    with open(trace_path, "w") as fh:
        fh.write("t_ms,actual_x,predicted_x\n")
        if prediction_rows:
            t_truth = truth[:, 0] * 1000.0
            errs = []
            for target_ms, px, py in prediction_rows:
                ax = float(np.interp(target_ms, t_truth, truth[:, 1]))
                fh.write(f"{target_ms!r},{ax!r},{px!r}\n")
                errs.append(abs(px - ax))
            pred_stats = (float(np.mean(errs)), float(np.max(errs)))

    run_metrics_path = out_dir / "run_metrics.csv"
    with open(run_metrics_path, "w") as fh:
        fh.write("field,value\n")
        fh.write(f"completed,{int(server.task_done)}\n")
        fh.write(f"te_s,{te!r}\n")
        fh.write(f"lp_m,{lp!r}\n")
        fh.write(f"goal_error_m,{goal_error!r}\n")
        fh.write(f"replanned,{int(replanned_any)}\n")
        fh.write(f"min_clearance_m,{min_clearance!r}\n")
        fh.write(f"pred_mean_x_err,{pred_stats[0]!r}\n")
        fh.write(f"pred_max_x_err,{pred_stats[1]!r}\n")

    path_json = out_dir / "path.json"
    with open(path_json, "w") as fh:
        payload = {"executed": [[float(x), float(y)] for _, x, y in truth_log]}
        if server.plan is not None:
            payload["plan"] = server.plan.to_json()
        if server.grid is not None:
            payload["grid"] = server.grid.to_json()
        json.dump(payload, fh)

    metrics = ctl.RunMetrics(tp=plan_times, tr=replan_times)
    metrics.finish(te, lp, completed=server.task_done)
    table3 = out_dir / "table3_metrics.csv"
    metrics.write_csv(table3)
    with open(out_dir / "timings.csv", "w") as fh:
        fh.write("stage,seconds\n")
        fh.write(f"fusion_total,{fuse_wall!r}\n")
        for k, t in enumerate(plan_times):
            fh.write(f"plan_{k},{t!r}\n")
        for k, t in enumerate(replan_times):
            fh.write(f"replan_{k},{t!r}\n")

    return ScenarioResult(
        completed=server.task_done, te_s=te, lp_m=lp, goal_error_m=goal_error,
        replanned=replanned_any, min_clearance_m=min_clearance,
        prediction_mean_x_err=pred_stats[0], prediction_max_x_err=pred_stats[1],
        plan_times=plan_times, replan_times=replan_times,
        artifacts={"run_metrics": run_metrics_path,
                   "prediction_trace": trace_path, "path": path_json,
                   "table3": table3, "timings": out_dir / "timings.csv"},
        truth_xy=truth[:, 1:3] if len(truth) else np.zeros((0, 2)),
        executed_goal=final_goal)


def _apply_event(event: dict, server: _ServerState, config: ScenarioConfig,
                 now_ms: float, plan_to, replan_times: list):
    interact.validate_event(event)
    server._replanned_flag = False
    kind = event["type"]
    if server.ground is None:
        raise ScenarioFailed("interface event before ground plane was fitted")
    if kind == "mark_path":
        server.marking = interact.mark_path(event["points"], server.ground,
                                            created_at=now_ms)
        server.marking_idx = 0
        plan_to(server.marking.xy[-1], now_ms)
    elif kind == "mark_object":
        label, _ = interact.mark_object(event["point"], server.volume,
                                        server.last_frame, config.intrinsics)
        parsed = ctl.parse_task({"type": "mark_object", "label": label},
                                volume=server.volume, created_at=now_ms)
        plan_to(parsed.task.goal, now_ms)
    elif kind == "place_obstacle":
        obstacle = interact.place_obstacle(
            [event["pos"][0], event["pos"][1], 0.5], server.ground,
            robot_xy=server.last_odo[:2],
            obstacle_id=server.next_obstacle_id,
            footprint=float(event.get("radius", 0.2)),
            shape=event.get("shape", "sphere"),
            robot_radius=config.robot_radius)
        server.obstacles[obstacle.id] = obstacle
        server.next_obstacle_id += 1
        server.rebuild_grid(config)
        if server.plan is not None:
            new_plan, replanned, tr = planner.replan_if_blocked(
                server.plan, server.grid, server.last_odo[:2],
                dataclasses.replace(config.rrt, seed=config.seed + 29),
                created_at_ms=now_ms)
            if replanned:
                replan_times.append(tr)
                server.plan = new_plan
                server.waypoint_idx = 0
                server._replanned_flag = True
    elif kind == "remove_obstacle":
        server.obstacles.pop(int(event["id"]), None)
        server.rebuild_grid(config)
    elif kind == "push":
        body = server.bodies.get(int(event["body_id"]))
        if body is not None:
            static = server.build_grid(config, exclude_body=body.id)
            server.bodies[body.id] = interact.push_body(
                body, event["hip"], 1.0 / config.control_rate, static)
            server.rebuild_grid(config)


# ---------------------------------------------------------------------------
# scenario presets
# ---------------------------------------------------------------------------

def straight_scene(length: float = 6.0) -> simworld.Scene:
    return simworld.Scene(
        bounds=np.array([[-1.0, -2.5, -1.0], [length + 1.0, 2.5, 2.0]]),
        floor=simworld.Floor(0.0))


def tabletop_scene() -> simworld.Scene:
    """Floor with a target box, sized for a 128-cell 0.05 m grid."""
    return simworld.Scene(
        bounds=np.array([[0.0, 0.0, -1.0], [6.4, 6.4, 2.0]]),
        floor=simworld.Floor(0.0),
        boxes=[simworld.Box((4.0, 2.9, 0.0), (4.5, 3.5, 0.35),
                            color=(210, 70, 50))])


def straight_line_config(delay: DelayModel, seed: int = 0,
                         speed: float = 0.2) -> ScenarioConfig:
    """Straight +x run under delay; the latency-compensation experiment."""
    scene = straight_scene()
    return ScenarioConfig(
        scene=scene, delay=delay, seed=seed, v_max=speed,
        start_pose=(0.0, 0.0, 0.0), goal_tolerance=0.1,
        max_duration_s=40.0,
        events=[(1.0, {"type": "mark_path",
                       "points": [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0],
                                  [3.2, 0.0, 0.0]]})])


def approach_object_config(seed: int = 0) -> ScenarioConfig:
    scene = tabletop_scene()
    return ScenarioConfig(
        scene=scene, delay=Fixed(30.0), seed=seed,
        start_pose=(1.0, 3.2, 0.0), max_duration_s=90.0,
        events=[(1.5, {"type": "mark_object", "point": [4.1, 3.2, 0.33]})])


def obstacle_midrun_config(seed: int = 0) -> ScenarioConfig:
    # corridor run at y = 1.5, well clear of the scene box, so the initial
    # smoothed plan is a straight line the obstacle provably blocks
    scene = tabletop_scene()
    return ScenarioConfig(
        scene=scene, delay=Fixed(30.0), seed=seed,
        start_pose=(1.0, 1.5, 0.0), max_duration_s=90.0,
        events=[
            (1.0, {"type": "mark_path", "points": [[3.0, 1.5, 0.0],
                                                   [5.5, 1.5, 0.0]]}),
            (5.0, {"type": "place_obstacle", "pos": [3.2, 1.5],
                   "shape": "sphere", "radius": 0.2}),
        ])


SCENARIOS = {
    "straight": lambda seed=0, delay=Fixed(100.0): straight_line_config(delay, seed),
    "approach": approach_object_config,
    "obstacle": obstacle_midrun_config,
}
