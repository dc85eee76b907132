"""Live session: real-time loop plus a WebSocket endpoint for the console.

The session runs the simulated robot and the execution stack in one loop on
wall time (robot substeps, frame fusion burst, 20 Hz control, delayed
channels) and broadcasts a complete StateBroadcast snapshot at 10 Hz or
better. Consoles send interface-event JSON; malformed input gets an error
reply and the session stays alive. Every broadcast is a full snapshot, so a
console can reconnect at any moment and rebuild its view from one message.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import threading
import time

import numpy as np

from . import control as ctl
from . import interact, planner, simworld
from .errors import BindFailed, TelehapticError
from .netstream import ChannelPair, WallClock, decode_frame, encode_frame
from .orchestrator import SCHEMA_VERSION, ScenarioConfig, _ServerState, _apply_event
from .tsdf import detect_ground_plane, integrate_frame, surface_voxel_mask

BROADCAST_HZ = 12.5  # contract is >= 10 Hz delivered; schedule with margin
CLOUD_MAX_POINTS = 50_000


def encode_cloud(volume, max_points: int = CLOUD_MAX_POINTS) -> dict:
    """Quantized surface point cloud: u16 millimeter offsets plus RGB."""
    mask = surface_voxel_mask(volume)
    idx = np.argwhere(mask)
    if idx.shape[0] > max_points:
        stride = int(np.ceil(idx.shape[0] / max_points))
        idx = idx[::stride]
    centers = volume.origin[None, :] + (idx + 0.5) * volume.voxel_size
    colors = volume.color[idx[:, 0], idx[:, 1], idx[:, 2]] if len(idx) \
        else np.zeros((0, 3), dtype=np.uint8)
    origin = centers.min(axis=0) if len(centers) else np.zeros(3)
    q = np.ascontiguousarray(
        np.clip(np.rint((centers - origin) / 1e-3), 0, 65535).astype("<u2"))
    blob = np.empty((len(q), 9), dtype=np.uint8)
    if len(q):
        blob[:, :6] = q.view(np.uint8).reshape(len(q), 6)
        blob[:, 6:] = colors.astype(np.uint8)
    return {
        "encoding": "q16",
        "origin": [float(x) for x in origin],
        "scale": 1e-3,
        "count": int(len(q)),
        "data": base64.b64encode(blob.tobytes()).decode("ascii"),
    }


class LiveSession:
    """Owns the real-time loop and assembles broadcast snapshots."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.clock = WallClock()
        self.pair = ChannelPair(config.delay, self.clock)
        self.robot = simworld.SimRobot(
            x=config.start_pose[0], y=config.start_pose[1],
            heading=config.start_pose[2], odom_sigma=config.odom_sigma,
            v_max=config.v_max, accel_limit=config.accel_limit)
        self.server = _ServerState(config)
        self.events: list[dict] = []
        self.lock = threading.Lock()
        self.latest_cmd = ctl.ZERO_COMMAND
        self.t0 = self.clock.now()
        self.seq = 0
        self.cmd_seq = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._cloud = {"encoding": "q16", "origin": [0, 0, 0], "scale": 1e-3,
                       "count": 0, "data": ""}
        self._haptic = None

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=5)

    def submit_event(self, event: dict):
        interact.validate_event(event)
        with self.lock:
            self.events.append(event)

    def now_ms(self) -> float:
        return (self.clock.now() - self.t0) * 1000.0

    # -- the live loop ----------------------------------------------------

    def _loop(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        dt = 0.02
        next_frame = 0.0
        next_control = 0.0
        frame_period = 1.0 / cfg.fps
        control_period = 1.0 / cfg.control_rate
        last_cloud = 0.0
        t_rel = 0.0
        while not self._stop.is_set():
            tick_start = self.clock.now()
            t_rel = tick_start - self.t0
            for msg in self.pair.downlink.poll():
                if msg[0] == "ping":
                    self.pair.uplink.send(("pong", msg[1]))
                elif msg[0] == "cmd":
                    payload = ctl.decode_command(msg[1])
                    self.latest_cmd = ctl.VelocityCommand(*payload["cmd"])
            with self.lock:
                self.robot = simworld.robot_step(self.robot, self.latest_cmd,
                                                 dt, rng)
            if t_rel >= next_frame:
                self.seq += 1
                frame = simworld.render_frame(
                    cfg.scene, self.robot.camera_pose(), cfg.intrinsics,
                    seq=self.seq, timestamp_ms=int(t_rel * 1000))
                self.pair.uplink.send(("frame", encode_frame(frame)))
                self.pair.uplink.send(("odo", {
                    "t_ms": int(t_rel * 1000), "x": self.robot.odom_x,
                    "y": self.robot.odom_y,
                    "heading": self.robot.odom_heading}))
                next_frame += frame_period
            if t_rel >= next_control:
                self._control_tick(t_rel * 1000.0)
                next_control += control_period
            if t_rel - last_cloud > 1.0:
                with self.lock:
                    self._cloud = encode_cloud(self.server.volume)
                last_cloud = t_rel
            elapsed = self.clock.now() - tick_start
            if elapsed < dt:
                time.sleep(dt - elapsed)

    def _control_tick(self, now_ms: float):
        cfg = self.config
        server = self.server
        for msg in self.pair.uplink.poll():
            if msg[0] == "pong":
                server.rtt.add_sample(self.clock.now() - msg[1],
                                      self.clock.now())
            elif msg[0] == "frame":
                frame = decode_frame(msg[1])
                server.last_frame = frame
                if server.frames_fused < cfg.fusion_frames:
                    integrate_frame(server.volume, frame, cfg.intrinsics)
                    server.frames_fused += 1
                    server.burst.append(frame)
                    if (server.ground is None
                            and len(server.burst) >= cfg.ground_frames):
                        server.ground = detect_ground_plane(
                            server.burst, cfg.intrinsics, seed=cfg.seed)
                        with self.lock:
                            server.rebuild_grid(cfg)
            elif msg[0] == "odo":
                odo = msg[1]
                if server.last_odo is not None:
                    dt_odo = (odo["t_ms"] - server.last_odo_t) * 1e-3
                    if dt_odo > 0:
                        server.predictor.push((
                            (odo["x"] - server.last_odo[0]) / dt_odo,
                            (odo["y"] - server.last_odo[1]) / dt_odo, 0.0))
                server.last_odo = np.array([odo["x"], odo["y"],
                                            odo["heading"]])
                server.last_odo_t = odo["t_ms"]

        if server.last_odo is None:
            return
        pending: list[dict] = []
        with self.lock:
            pending, self.events = self.events, []
        for event in pending:
            try:
                with self.lock:
                    _apply_event(event, server, cfg, now_ms, self._plan_to, [])
            except TelehapticError:
                pass  # rejected events (overlap etc.) do not kill the loop

        self.pair.downlink.send(("ping", self.clock.now()))
        if server.grid is None or server.plan is None:
            return
        rtt = server.rtt.estimate or 0.0
        server.predictor.fit()
        v_hat = (server.predictor.predict_velocity()[:2]
                 if server.predictor.ready else np.zeros(2))
        speed = float(np.linalg.norm(v_hat))
        if speed > cfg.v_max:
            v_hat *= cfg.v_max / speed
        predicted = server.last_odo[:2] + v_hat * rtt
        with self.lock:
            self._predicted = predicted
        wps = server.plan.waypoints
        while (server.waypoint_idx < len(wps) - 1
               and np.linalg.norm(wps[server.waypoint_idx]
                                  - server.last_odo[:2])
               <= cfg.arrival_tolerance):
            server.waypoint_idx += 1
        target = wps[min(server.waypoint_idx, len(wps) - 1)]
        state = ctl.RobotState(float(predicted[0]), float(predicted[1]),
                               float(server.last_odo[2]))
        cmd, _ = ctl.trajectory_step(state, target, 1.0 / cfg.control_rate,
                                     k_p=cfg.k_p, v_max=cfg.v_max,
                                     arrival_tol=cfg.arrival_tolerance,
                                     align_heading=cfg.align_heading)
        self.cmd_seq += 1
        self.pair.downlink.send(("cmd", ctl.encode_command(
            self.cmd_seq, now_ms, target, cmd)))

    def _plan_to(self, goal_xy, now_ms: float):
        from .orchestrator import _nearest_free
        goal = _nearest_free(self.server.grid,
                             np.asarray(goal_xy, dtype=np.float64))
        plan = planner.rrt_plan(
            self.server.grid, self.server.last_odo[:2], goal,
            dataclasses.replace(self.config.rrt, seed=self.config.seed + 17),
            created_at_ms=now_ms)
        self.server.plan = plan
        self.server.plan_goal = goal
        self.server.waypoint_idx = 0

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> dict:
        cfg = self.config
        with self.lock:
            robot = self.robot
            server = self.server
            predicted = getattr(self, "_predicted", None)
            msg = {
                "schema": SCHEMA_VERSION,
                "t_ms": self.now_ms(),
                "scene_bounds": cfg.scene.bounds.tolist(),
                "robot": {
                    "pose": [robot.x, robot.y, robot.heading],
                    "odom": [robot.odom_x, robot.odom_y, robot.odom_heading],
                    "predicted": ([float(predicted[0]), float(predicted[1])]
                                  if predicted is not None
                                  else [robot.odom_x, robot.odom_y]),
                },
                "path": ([[float(x), float(y)] for x, y in
                          server.plan.waypoints]
                         if server.plan is not None else []),
                "markings": ([[float(x), float(y)] for x, y in
                              server.marking.xy]
                             if server.marking is not None else []),
                "obstacles": [{"id": o.id,
                               "pos": [float(o.position[0]),
                                       float(o.position[1])],
                               "radius": o.footprint}
                              for o in server.obstacles.values()],
                "objects": [],
                "cloud": self._cloud,
                "timing": {"rtt_s": server.rtt.estimate or 0.0},
            }
            if self._haptic is not None:
                msg["haptic"] = self._haptic
            vol = server.volume
            if vol.fields.label is not None and vol.label.max() > 0:
                from .segment import object_extent
                for label in np.unique(vol.label[vol.label > 0]):
                    try:
                        centroid, bounds = object_extent(vol, int(label))
                    except TelehapticError:
                        continue
                    msg["objects"].append({
                        "label": int(label),
                        "centroid": [float(v) for v in centroid],
                        "bounds": [[float(v) for v in b] for b in bounds],
                    })
        return msg


@dataclasses.dataclass
class ServeHandle:
    session: LiveSession
    host: str
    port: int
    _server: object
    _thread: threading.Thread

    def stop(self):
        self.session.stop()
        self._server.shutdown()
        self._thread.join(timeout=5)


def serve(config: ScenarioConfig, host: str = "127.0.0.1",
          port: int = 8765) -> ServeHandle:
    """Start the live session and its WebSocket endpoint; returns a handle."""
    try:
        from websockets.sync.server import serve as ws_serve
    except ImportError as exc:  # pragma: no cover
        raise BindFailed(f"websockets package unavailable: {exc}")

    session = LiveSession(config).start()
    interval = 1.0 / BROADCAST_HZ

    def handler(conn):
        stop_conn = threading.Event()

        def sender():
            next_t = time.monotonic()
            while not stop_conn.is_set():
                try:
                    conn.send(json.dumps(session.snapshot()))
                except Exception:
                    return
                next_t += interval
                pause = next_t - time.monotonic()
                if pause > 0:
                    time.sleep(pause)
                else:
                    next_t = time.monotonic()  # fell behind; resynchronize

        tx = threading.Thread(target=sender, daemon=True)
        tx.start()
        try:
            while True:
                raw = conn.recv()
                try:
                    event = json.loads(raw)
                    session.submit_event(event)
                    conn.send(json.dumps({"type": "ack"}))
                except (ValueError, TelehapticError) as exc:
                    conn.send(json.dumps({"type": "error",
                                          "message": str(exc)}))
        except Exception:
            pass
        finally:
            stop_conn.set()

    try:
        server = ws_serve(handler, host, port)
    except OSError as exc:
        session.stop()
        raise BindFailed(f"cannot bind {host}:{port}: {exc}")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return ServeHandle(session=session, host=host, port=port,
                       _server=server, _thread=thread)
