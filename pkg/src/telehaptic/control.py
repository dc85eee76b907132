"""Layered control: task parsing, goal selection, latency prediction, trajectory.

The velocity predictor fits, per axis, a linear autoregressive model over a
sliding window of past velocities: row j of the history matrix holds
(v_j, ..., v_{j+m}) with target v_{j+m+1}. The fit is minimal-norm least
squares (SVD with a relative singular-value cutoff eps), which degrades
gracefully on rank-deficient histories: constant velocity spreads weight
uniformly, an all-zero history yields zero coefficients. The predicted
velocity extrapolates the goal-relevant position across the measured
round-trip delay: x_pred = x + v_hat * t.
"""

from __future__ import annotations

import dataclasses
import json
from collections import deque

import numpy as np
from numpy.typing import NDArray

from .errors import NegativeDelay, NoCandidates, UnknownLabel

V_MAX_DEFAULT = 0.3  # m/s
TURN_QUANTUM = np.pi / 4.0
ARRIVAL_TOLERANCE = 0.05  # m
KP_DEFAULT = 1.0


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ApproachPoint:
    point: NDArray[np.float64]
    created_at: float = 0.0


@dataclasses.dataclass(frozen=True)
class ApproachObject:
    label: int
    goal: NDArray[np.float64]
    created_at: float = 0.0


@dataclasses.dataclass(frozen=True)
class FollowPath:
    points: NDArray[np.float64]  # (N, 2) ordered marking points
    created_at: float = 0.0


Task = ApproachPoint | ApproachObject | FollowPath


@dataclasses.dataclass(frozen=True)
class ParsedEvent:
    task: Task | None
    needs_replan: bool = False


def parse_task(event: dict, volume=None, created_at: float = 0.0) -> ParsedEvent:
    """Map an interface event onto a task and/or a replanning request.

    mark_path events become FollowPath over the marked floor points;
    mark_object events resolve the label's centroid (vertical projection to
    the ground) into ApproachObject; obstacle placement and removal carry no
    task but require replanning.
    """
    kind = event.get("type")
    if kind == "mark_path":
        pts = np.asarray(event["points"], dtype=np.float64)[:, :2]
        return ParsedEvent(FollowPath(points=pts, created_at=created_at))
    if kind == "mark_object":
        label = int(event["label"])
        from .segment import object_extent
        if volume is None:
            raise UnknownLabel("no volume to resolve the label against")
        centroid, _ = object_extent(volume, label)
        return ParsedEvent(ApproachObject(label=label, goal=centroid[:2].copy(),
                                          created_at=created_at))
    if kind in ("place_obstacle", "remove_obstacle", "push"):
        return ParsedEvent(None, needs_replan=True)
    raise ValueError(f"unknown interface event type {kind!r}")


def select_goal(mark_point, path_point, robot_xy,
                prefer_nearest: bool = False) -> NDArray[np.float64]:
    """Pick between the marking point and the planned path point.

    Default rule: the candidate farther from the robot wins, ties go to the
    path point. ``prefer_nearest`` flips the comparison (config escape hatch;
    the maximal-distance rule can prefer a stale marking).
    """
    if mark_point is None and path_point is None:
        raise NoCandidates("neither marking nor path point present")
    if mark_point is None:
        return np.asarray(path_point, dtype=np.float64)
    if path_point is None:
        return np.asarray(mark_point, dtype=np.float64)
    robot_xy = np.asarray(robot_xy, dtype=np.float64)
    d_mark = float(np.linalg.norm(np.asarray(mark_point) - robot_xy))
    d_path = float(np.linalg.norm(np.asarray(path_point) - robot_xy))
    if prefer_nearest:
        better_mark = d_mark < d_path
    else:
        better_mark = d_mark > d_path
    return np.asarray(mark_point if better_mark else path_point,
                      dtype=np.float64)


# ---------------------------------------------------------------------------
# latency-compensating predictor
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class PredictorModel:
    """Per-axis linear velocity predictor with its own history buffer."""

    window: int = 5
    eps: float = 1e-8
    coefficients: NDArray[np.float64] | None = None  # (3, window + 1)
    degenerate: bool = False
    history: deque = dataclasses.field(default_factory=lambda: deque(maxlen=64))

    def push(self, velocity) -> None:
        self.history.append(np.asarray(velocity, dtype=np.float64))

    @property
    def ready(self) -> bool:
        return len(self.history) >= self.window + 2

    def fit(self) -> bool:
        """Refit from the buffer; returns False when history is too short."""
        if not self.ready:
            return False
        model = fit_predictor(np.asarray(self.history), self.window, self.eps)
        self.coefficients = model.coefficients
        self.degenerate = model.degenerate
        return True

    def predict_velocity(self) -> NDArray[np.float64]:
        if self.coefficients is None:
            return np.zeros(3)
        win = np.asarray(self.history)[-(self.window + 1):]
        return np.einsum("ij,ji->i", self.coefficients, win)


def fit_predictor(history: NDArray, window: int = 5,
                  eps: float = 1e-8) -> PredictorModel:
    """Fit per-axis coefficients over a velocity history of shape (N, >=1).

    N must be at least window + 2 (one regression row). eps acts as a
    relative singular-value cutoff: the solution is the minimal-norm least
    squares solution, which keeps consistent systems exact and collapses
    rank-deficient directions instead of shrinking predictions.
    """
    history = np.atleast_2d(np.asarray(history, dtype=np.float64))
    if history.ndim == 2 and history.shape[0] == 1 and history.shape[1] > 3:
        history = history.T
    n, axes = history.shape
    m = int(window)
    if n < m + 2:
        raise ValueError(f"need at least {m + 2} samples, got {n}")
    rows = n - m - 1
    coeffs = np.zeros((3, m + 1))
    degenerate = True
    for ax in range(min(axes, 3)):
        v = history[:, ax]
        V = np.lib.stride_tricks.sliding_window_view(v[:-1], m + 1)[:rows]
        y = v[m + 1:]
        if not np.any(V) and not np.any(y):
            continue  # all-zero rows: keep zero coefficients
        degenerate = False
        sol, *_ = np.linalg.lstsq(V, y, rcond=max(eps, 1e-15))
        coeffs[ax] = sol
    model = PredictorModel(window=m, eps=eps, coefficients=coeffs,
                           degenerate=degenerate)
    model.history.extend(np.pad(history, ((0, 0), (0, 3 - axes)))
                         if axes < 3 else history)
    return model


def predict_goal(goal, model: PredictorModel, t: float) -> NDArray[np.float64]:
    """Advance a goal-relevant position by the predicted velocity over t seconds."""
    if t < 0:
        raise NegativeDelay(f"delay {t} s")
    goal = np.asarray(goal, dtype=np.float64)
    v = model.predict_velocity()
    return goal + v[:goal.shape[-1]] * t


# ---------------------------------------------------------------------------
# robot state and trajectory controller
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RobotState:
    """Planar pose plus the velocity triple (vx, vy, heading rate)."""

    x: float
    y: float
    heading: float
    velocity: NDArray[np.float64] = dataclasses.field(
        default_factory=lambda: np.zeros(3))
    stamp_ms: float = 0.0

    @property
    def xy(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y])


@dataclasses.dataclass(frozen=True)
class VelocityCommand:
    vx: float
    vy: float
    omega: float

    @property
    def is_turn(self) -> bool:
        return self.omega != 0.0

    def as_array(self):
        return np.array([self.vx, self.vy, self.omega])


ZERO_COMMAND = VelocityCommand(0.0, 0.0, 0.0)


def wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


def trajectory_step(robot: RobotState, goal, dt: float, k_p: float = KP_DEFAULT,
                    v_max: float = V_MAX_DEFAULT,
                    arrival_tol: float = ARRIVAL_TOLERANCE,
                    align_heading: bool = True):
    """One tick of the holonomic P controller.

    Returns (command, arrived). Heading realignment is issued as quantized
    45-degree turn commands before any translation; the translation command
    is the clamped proportional term toward the goal.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    goal = np.asarray(goal, dtype=np.float64)
    delta = goal - robot.xy
    dist = float(np.linalg.norm(delta))
    if dist <= arrival_tol:
        return ZERO_COMMAND, True

    if align_heading:
        bearing = float(np.arctan2(delta[1], delta[0]))
        target = round(bearing / TURN_QUANTUM) * TURN_QUANTUM
        diff = wrap_angle(target - robot.heading)
        if abs(diff) > 1e-9:
            step = float(np.sign(diff) * min(TURN_QUANTUM, abs(diff)))
            return VelocityCommand(0.0, 0.0, step / dt), False

    cmd = k_p * delta
    speed = float(np.linalg.norm(cmd))
    if speed > v_max:
        cmd = cmd * (v_max / speed)
    return VelocityCommand(float(cmd[0]), float(cmd[1]), 0.0), False


# ---------------------------------------------------------------------------
# wire format and run metrics
# ---------------------------------------------------------------------------

def encode_command(seq: int, t_ms: float, goal, cmd: VelocityCommand) -> str:
    """Server-to-robot JSON command message."""
    return json.dumps({
        "seq": int(seq),
        "t_ms": float(t_ms),
        "goal": [float(goal[0]), float(goal[1])],
        "cmd": [cmd.vx, cmd.vy, cmd.omega],
    }, separators=(",", ":"))


def decode_command(payload: str) -> dict:
    msg = json.loads(payload)
    for key in ("seq", "t_ms", "goal", "cmd"):
        if key not in msg:
            raise ValueError(f"command missing field {key!r}")
    return msg


@dataclasses.dataclass
class RunMetrics:
    """Planning/replanning times, execution time and executed path length."""

    tp: list = dataclasses.field(default_factory=list)  # planning, s
    tr: list = dataclasses.field(default_factory=list)  # replanning, s
    te: float | None = None  # total execution, s
    lp: float | None = None  # executed path length, m
    completed: bool = False

    def add_plan_time(self, seconds: float) -> None:
        self.tp.append(float(seconds))

    def add_replan_time(self, seconds: float) -> None:
        self.tr.append(float(seconds))

    def finish(self, te: float, lp: float, completed: bool = True) -> None:
        self.te = float(te)
        self.lp = float(lp)
        self.completed = completed

    @staticmethod
    def _stats(values):
        if not values:
            return None
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std()),
                "max": float(arr.max()), "min": float(arr.min())}

    def table(self) -> dict:
        rows = {"Tp": self._stats(self.tp), "Tr": self._stats(self.tr),
                "Te": self._stats([self.te] if self.te is not None else []),
                "Lp": self._stats([self.lp] if self.lp is not None else [])}
        return rows

    def write_csv(self, path) -> None:
        """Run-summary CSV: one row per metric, stats columns."""
        with open(path, "w") as fh:
            fh.write("metric,mean,std,max,min,count\n")
            counts = {"Tp": len(self.tp), "Tr": len(self.tr),
                      "Te": int(self.te is not None),
                      "Lp": int(self.lp is not None)}
            for name, stats in self.table().items():
                if stats is None:
                    fh.write(f"{name},,,,,0\n")
                else:
                    fh.write(f"{name},{stats['mean']!r},{stats['std']!r},"
                             f"{stats['max']!r},{stats['min']!r},{counts[name]}\n")
            fh.write(f"completed,{int(self.completed)},,,,\n")


def record_metrics(run) -> RunMetrics:
    """Extract the run-summary metrics from a finished run log object."""
    metrics = RunMetrics()
    for t in getattr(run, "plan_times", []):
        metrics.add_plan_time(t)
    for t in getattr(run, "replan_times", []):
        metrics.add_replan_time(t)
    te = getattr(run, "execution_time", None)
    odo = getattr(run, "odometry_xy", None)
    lp = None
    if odo is not None and len(odo) >= 2:
        odo = np.asarray(odo, dtype=np.float64)
        lp = float(np.linalg.norm(np.diff(odo, axis=0), axis=1).sum())
    metrics.finish(te if te is not None else 0.0, lp if lp is not None else 0.0,
                   completed=bool(getattr(run, "completed", False)))
    return metrics
