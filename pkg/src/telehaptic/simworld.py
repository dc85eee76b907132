"""Hardware stand-in: analytic RGBD renderer and a kinematic robot.

Scenes are a floor plane plus axis-aligned boxes and spheres, each with a
flat RGB albedo. Rays are parameterized by camera z-depth so the nearest-hit
parameter is directly the value stored in the depth image (millimeters).
The robot is a holonomic base with a camera mast; commands are world-frame
velocities, heading turns are quantized to 45 degrees per step, and odometry
is the true pose plus optional Gaussian noise.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
from numpy.typing import NDArray

from .camera import CameraIntrinsics, RgbdFrame, check_pose, make_pose
from .control import TURN_QUANTUM, V_MAX_DEFAULT, VelocityCommand
from .errors import ScriptInvalid
from .netstream import write_frame


@dataclasses.dataclass
class Floor:
    height: float = 0.0
    color: tuple = (150, 150, 150)


@dataclasses.dataclass
class Box:
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    color: tuple = (200, 80, 60)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if not (self.hi > self.lo).all():
            raise ValueError("box needs hi > lo on every axis")


@dataclasses.dataclass
class Sphere:
    center: NDArray[np.float64]
    radius: float
    color: tuple = (70, 90, 210)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclasses.dataclass
class Scene:
    """Floor plus solid primitives, clipped to rectangular bounds."""

    bounds: NDArray[np.float64]  # (2, 3) lo/hi
    floor: Floor
    boxes: list = dataclasses.field(default_factory=list)
    spheres: list = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64)

    def contains_xy(self, xy) -> bool:
        return bool((xy[0] >= self.bounds[0, 0]) and (xy[0] <= self.bounds[1, 0])
                    and (xy[1] >= self.bounds[0, 1]) and (xy[1] <= self.bounds[1, 1]))

    def to_json(self) -> dict:
        prims = [{"kind": "floor", "height": self.floor.height,
                  "color": list(self.floor.color)}]
        for b in self.boxes:
            prims.append({"kind": "box", "min": b.lo.tolist(),
                          "max": b.hi.tolist(), "color": list(b.color)})
        for s in self.spheres:
            prims.append({"kind": "sphere", "center": s.center.tolist(),
                          "radius": s.radius, "color": list(s.color)})
        return {"bounds": self.bounds.tolist(), "primitives": prims}

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        floor = None
        boxes, spheres = [], []
        for p in data["primitives"]:
            kind = p["kind"]
            if kind == "floor":
                if floor is not None:
                    raise ValueError("scene must have exactly one floor")
                floor = Floor(height=float(p.get("height", 0.0)),
                              color=tuple(p.get("color", (150, 150, 150))))
            elif kind == "box":
                boxes.append(Box(p["min"], p["max"],
                                 tuple(p.get("color", (200, 80, 60)))))
            elif kind == "sphere":
                spheres.append(Sphere(p["center"], float(p["radius"]),
                                      tuple(p.get("color", (70, 90, 210)))))
            else:
                raise ValueError(f"unknown primitive kind {kind!r}")
        if floor is None:
            raise ValueError("scene must have exactly one floor")
        return cls(bounds=np.asarray(data["bounds"], dtype=np.float64),
                   floor=floor, boxes=boxes, spheres=spheres)


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_json(json.load(fh))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene.to_json(), fh, indent=1)


def render_frame(scene: Scene, pose: NDArray, intrinsics: CameraIntrinsics,
                 seq: int = 0, timestamp_ms: int = 0,
                 depth_sigma: float = 0.0, rng=None) -> RgbdFrame:
    """Nearest-hit analytic render; misses and out-of-range depths store 0."""
    check_pose(pose)
    dirs = intrinsics.pixel_dirs()
    d_w = dirs @ pose[:3, :3].T  # z-depth parameterization
    o = pose[:3, 3]
    h, w = intrinsics.shape
    best = np.full((h, w), np.inf)
    color = np.zeros((h, w, 3), dtype=np.uint8)

    def consider(t, mask, col):
        tt = np.where(mask & (t > 0), t, np.inf)
        closer = tt < best
        best[closer] = tt[closer]
        color[closer] = col

    # floor clipped to the scene bounds
    dz = d_w[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = (scene.floor.height - o[2]) / dz
        p = o[None, None, :2] + t_floor[..., None] * d_w[..., :2]
        in_bounds = ((np.abs(dz) > 1e-12)
                     & (p[..., 0] >= scene.bounds[0, 0])
                     & (p[..., 0] <= scene.bounds[1, 0])
                     & (p[..., 1] >= scene.bounds[0, 1])
                     & (p[..., 1] <= scene.bounds[1, 1]))
    consider(t_floor, in_bounds, scene.floor.color)

    for box in scene.boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d_w
        t0 = (box.lo[None, None, :] - o[None, None, :]) * inv
        t1 = (box.hi[None, None, :] - o[None, None, :]) * inv
        tn = np.nanmax(np.minimum(t0, t1), axis=-1)
        tf = np.nanmin(np.maximum(t0, t1), axis=-1)
        consider(tn, tn <= tf, box.color)

    for sph in scene.spheres:
        oc = o - sph.center
        a = np.sum(d_w * d_w, axis=-1)
        b = 2.0 * (d_w @ oc)
        c = float(oc @ oc) - sph.radius ** 2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = (-b - sq) / (2 * a)
        consider(t, disc >= 0, sph.color)

    depth_m = best.copy()
    if depth_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        noisy = np.isfinite(depth_m)
        depth_m[noisy] += rng.normal(0.0, depth_sigma, size=int(noisy.sum()))
    valid = (np.isfinite(depth_m) & (depth_m >= intrinsics.depth_min)
             & (depth_m <= intrinsics.depth_max))
    depth_mm = np.zeros((h, w), dtype=np.uint16)
    depth_mm[valid] = np.clip(np.rint(depth_m[valid] * 1000.0), 1,
                              65535).astype(np.uint16)
    color[~valid] = 0
    return RgbdFrame(seq=seq, timestamp_ms=timestamp_ms, depth=depth_mm,
                     color=color, pose=np.asarray(pose, dtype=np.float64))


# ---------------------------------------------------------------------------
# robot
# ---------------------------------------------------------------------------

def default_camera_mount(height: float = 0.85,
                         pitch_down: float = np.radians(32.0)) -> NDArray:
    """Camera-on-mast transform in the robot base frame (x forward, z up)."""
    cp, sp = np.cos(pitch_down), np.sin(pitch_down)
    # camera z (optical axis) pitched down from the base x axis
    z_c = np.array([cp, 0.0, -sp])
    y_c = np.array([-sp, 0.0, -cp])  # image down
    x_c = np.cross(y_c, z_c)
    rot = np.stack([x_c, y_c, z_c], axis=1)
    return make_pose(rot, np.array([0.0, 0.0, height]))


@dataclasses.dataclass
class SimRobot:
    """Holonomic base with ground-truth pose and noisy odometry.

    accel_limit bounds the commanded-velocity slew rate (m/s^2); infinite by
    default so a command takes effect within one step.
    """

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    odom_x: float = 0.0
    odom_y: float = 0.0
    odom_heading: float = 0.0
    odom_sigma: float = 0.0
    v_max: float = V_MAX_DEFAULT
    accel_limit: float = np.inf
    vel: NDArray[np.float64] = dataclasses.field(
        default_factory=lambda: np.zeros(2))
    mount: NDArray[np.float64] = dataclasses.field(
        default_factory=default_camera_mount)

    @property
    def pose_xy(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y])

    def base_pose(self) -> NDArray[np.float64]:
        c, s = np.cos(self.heading), np.sin(self.heading)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return make_pose(rot, np.array([self.x, self.y, 0.0]))

    def camera_pose(self) -> NDArray[np.float64]:
        return self.base_pose() @ self.mount


def robot_step(robot: SimRobot, command: VelocityCommand, dt: float,
               rng=None) -> SimRobot:
    """Integrate one command tick; returns a new SimRobot.

    Turn commands rotate by at most one 45-degree quantum and suppress
    translation for the tick; translation commands are clamped to v_max and
    integrated in the world frame. With zero noise the odometry equals the
    true pose bit for bit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = dataclasses.replace(robot)
    if command.omega != 0.0:
        dtheta = command.omega * dt
        dtheta = float(np.clip(dtheta, -TURN_QUANTUM, TURN_QUANTUM))
        new.heading = robot.heading + dtheta
        new.vel = np.zeros(2)
    else:
        v = np.array([command.vx, command.vy])
        speed = float(np.linalg.norm(v))
        if speed > robot.v_max:
            v *= robot.v_max / speed
        if np.isfinite(robot.accel_limit):
            dv = v - robot.vel
            dv_norm = float(np.linalg.norm(dv))
            max_dv = robot.accel_limit * dt
            if dv_norm > max_dv:
                dv *= max_dv / dv_norm
            v = robot.vel + dv
        new.vel = v
        new.x = robot.x + v[0] * dt
        new.y = robot.y + v[1] * dt
    if robot.odom_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        noise = rng.normal(0.0, robot.odom_sigma, size=2)
        new.odom_x = new.x + noise[0]
        new.odom_y = new.y + noise[1]
        new.odom_heading = new.heading
    else:
        new.odom_x, new.odom_y = new.x, new.y
        new.odom_heading = new.heading
    return new


# ---------------------------------------------------------------------------
# scripted sessions
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class ScriptSegment:
    """Constant world-frame velocity held for a duration."""

    vx: float
    vy: float
    omega: float
    duration_s: float


@dataclasses.dataclass
class SessionLog:
    frames: int
    final_pose: tuple
    odometry: list  # dicts with t_ms, x, y, heading
    frame_path: object
    odometry_path: object


def scripted_run(scene: Scene, segments, intrinsics: CameraIntrinsics,
                 out_frames, out_odometry, fps: float = 20.0,
                 start_pose=(0.0, 0.0, 0.0), odom_sigma: float = 0.0,
                 seed: int = 0) -> SessionLog:
    """Deterministic replay of velocity segments to a session file.

    Writes length-prefixed frame bytes plus a JSON odometry sidecar; raises
    ScriptInvalid when the trajectory leaves the scene bounds.
    """
    segments = list(segments)
    for seg in segments:
        if seg.duration_s <= 0:
            raise ScriptInvalid("segment durations must be positive")
    robot = SimRobot(x=start_pose[0], y=start_pose[1], heading=start_pose[2],
                     odom_sigma=odom_sigma)
    rng = np.random.default_rng(seed)
    dt = 1.0 / fps
    t = 0.0
    seq = 0
    odometry = []
    with open(out_frames, "wb") as fh:
        for seg in segments:
            steps = int(round(seg.duration_s * fps))
            cmd = VelocityCommand(seg.vx, seg.vy, seg.omega)
            for _ in range(steps):
                robot = robot_step(robot, cmd, dt, rng)
                t += dt
                seq += 1
                if not scene.contains_xy(robot.pose_xy):
                    raise ScriptInvalid(
                        f"trajectory leaves scene bounds at {robot.pose_xy}")
                frame = render_frame(scene, robot.camera_pose(), intrinsics,
                                     seq=seq, timestamp_ms=int(round(t * 1000)))
                write_frame(fh, frame)
                odometry.append({"t_ms": int(round(t * 1000)),
                                 "x": robot.odom_x, "y": robot.odom_y,
                                 "heading": robot.odom_heading})
    with open(out_odometry, "w") as fh:
        json.dump({"odometry": odometry}, fh)
    return SessionLog(frames=seq,
                      final_pose=(robot.x, robot.y, robot.heading),
                      odometry=odometry, frame_path=out_frames,
                      odometry_path=out_odometry)
