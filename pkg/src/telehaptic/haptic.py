"""Constraint-based haptic rendering against the streaming TSDF.

The proxy is the surface-constrained avatar of the haptic interaction point
(HIP). On first contact it snaps to the nearest visible surface sample; while
in contact it is constrained by the previous step's tangent plane before
being refined back onto the surface (force shading), optionally passing
through the friction-cone goal substitution and a bump-texture normal
perturbation. Force is a spring between proxy and HIP, clamped to the device
maximum.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np
from numpy.typing import NDArray

from .errors import NoSurfaceVisible, OutOfVolume
from .tsdf import RaycastResult, SurfaceSample, raycast, sample_tsdf_value

DEFAULT_STIFFNESS = 500.0  # N/m rendering spring
DEFAULT_FORCE_MAX = 12.0  # N, device limit


class ContactMode(enum.Enum):
    FREE = "free"
    CONTACT = "contact"


class FrictionMode(enum.Enum):
    NONE = "none"
    STICK = "stick"
    SLIP = "slip"


@dataclasses.dataclass
class BumpTexture:
    """Height field tiled over the surface tangent plane.

    heights is a square grid sampled over one spatial period in both tangent
    directions; amplitude scales the stored heights.
    """

    heights: NDArray[np.float64]
    amplitude: float
    period: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2 or self.heights.shape[0] != self.heights.shape[1]:
            raise ValueError("heights must be a square 2D grid")

    def gradient(self, u: float, v: float) -> tuple[float, float]:
        """Central-difference slope of the tiled height field at (u, v) meters."""
        if self.amplitude == 0.0:
            return 0.0, 0.0
        g = self.heights.shape[0]
        texel = self.period / g
        iu = int(np.floor(u / texel)) % g
        iv = int(np.floor(v / texel)) % g
        h = self.heights
        du = self.amplitude * (h[(iu + 1) % g, iv] - h[(iu - 1) % g, iv]) / (2 * texel)
        dv = self.amplitude * (h[iu, (iv + 1) % g] - h[iu, (iv - 1) % g]) / (2 * texel)
        return float(du), float(dv)


@dataclasses.dataclass(frozen=True)
class ForceSample:
    force: NDArray[np.float64]
    proxy: NDArray[np.float64]
    timestamp_ms: float


@dataclasses.dataclass
class HapticState:
    """HIP, proxy and contact bookkeeping for one haptic avatar."""

    hip: NDArray[np.float64]
    proxy: NDArray[np.float64]
    prev_normal: NDArray[np.float64]
    mode: ContactMode = ContactMode.FREE
    friction_mode: FrictionMode = FrictionMode.NONE
    stiffness: float = DEFAULT_STIFFNESS
    force_max: float = DEFAULT_FORCE_MAX
    friction: float = 0.0
    texture: BumpTexture | None = None
    degraded: bool = False

    @classmethod
    def free(cls, hip, **kwargs) -> "HapticState":
        hip = np.asarray(hip, dtype=np.float64).copy()
        return cls(hip=hip, proxy=hip.copy(),
                   prev_normal=np.array([0.0, 0.0, 1.0]), **kwargs)


def detect_collision(volume, point) -> bool:
    """True iff the interpolated field value at the point is negative.

    The exact zero level counts as non-penetrating; boundary behaviour is the
    proxy update's business. Raises OutOfVolume outside the sampled interior.
    """
    return sample_tsdf_value(volume, point) < 0.0


def nearest_to(cast: RaycastResult, q) -> SurfaceSample:
    """Nearest valid surface sample to q; ties go to the lowest row-major pixel.

    This is the serial reduction equivalent of a parallel min-reduce over the
    per-pixel distance array: |s - q|^2 = |s|^2 - 2 s.q + |q|^2, with the
    query-independent |s|^2 precomputed per cast.
    """
    q = np.asarray(q, dtype=np.float64)
    idx, pts, norm2 = cast.reduce_arrays()
    if idx.size == 0:
        raise NoSurfaceVisible("raycast produced no valid samples")
    score = norm2 - 2.0 * (pts @ q)
    best = int(np.argmin(score))  # first minimum: row-major tie-break
    v, u = divmod(int(idx[best]), cast.valid.shape[1])
    return cast.sample_at(v, u)


def nearest_surface_point(volume, pose, intrinsics, q) -> SurfaceSample:
    """One-shot convenience: raycast then reduce. Loops should cache the cast."""
    return nearest_to(raycast(volume, pose, intrinsics), q)


def apply_friction(state: HapticState, g, h_new):
    """Friction-cone goal substitution.

    The cone of half-angle arctan(mu) with apex at the HIP intersects the
    tangent plane in a circle of radius mu * dist(hip, plane) centred on the
    perpendicular foot g. A previous proxy inside the circle sticks; outside
    it slips to the closest circle point.
    """
    g = np.asarray(g, dtype=np.float64)
    h_new = np.asarray(h_new, dtype=np.float64)
    mu = state.friction
    if mu <= 0.0:
        return g, FrictionMode.SLIP
    r = mu * float(np.linalg.norm(h_new - g))
    offset = state.proxy - g
    dist = float(np.linalg.norm(offset))
    if dist <= r:
        return state.proxy.copy(), FrictionMode.STICK
    return g + (r / dist) * offset, FrictionMode.SLIP


def apply_texture(normal, contact, texture: BumpTexture | None):
    """Tilt the normal by the negative tangential height-field gradient."""
    normal = np.asarray(normal, dtype=np.float64)
    if texture is None or texture.amplitude == 0.0:
        return normal
    # tangent basis: stable reference axis far from the normal
    ref = np.array([1.0, 0.0, 0.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    t1 = ref - (ref @ normal) * normal
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    contact = np.asarray(contact, dtype=np.float64)
    du, dv = texture.gradient(float(contact @ t1), float(contact @ t2))
    perturbed = normal - du * t1 - dv * t2
    return perturbed / np.linalg.norm(perturbed)


def compute_force(state: HapticState, timestamp_ms: float = 0.0) -> ForceSample:
    """Spring force k (proxy - hip), clamped to force_max preserving direction."""
    f = state.stiffness * (state.proxy - state.hip)
    mag = float(np.linalg.norm(f))
    if mag > state.force_max:
        f = f * (state.force_max / mag)
    return ForceSample(force=f, proxy=state.proxy.copy(),
                       timestamp_ms=timestamp_ms)


def _field_value(volume, point) -> float:
    # outside the sampled interior the field is treated as free space
    return sample_tsdf_value(volume, point, outside=1.0)


def proxy_update(state: HapticState, volume, cast: RaycastResult,
                 h_new) -> HapticState:
    """Advance HIP to h_new and update the proxy with force shading.

    Free & outside the surface: proxy follows the HIP. First penetration:
    proxy snaps to the nearest visible surface sample. In contact: the
    previous tangent plane constrains the goal (perpendicular foot of the
    HIP), friction may substitute the goal, and the proxy is refined to the
    nearest surface sample of the current raycast. Contact releases only when
    the HIP is on the outside of the tangent plane and the field there is
    nonnegative. A raycast with no visible surface keeps the previous proxy
    and flags degraded quality.
    """
    h_new = np.asarray(h_new, dtype=np.float64)
    state = dataclasses.replace(state, hip=h_new.copy(), degraded=False)

    if state.mode == ContactMode.FREE:
        try:
            colliding = detect_collision(volume, h_new)
        except OutOfVolume:
            colliding = False
        if not colliding:
            state.proxy = h_new.copy()
            state.friction_mode = FrictionMode.NONE
            return state
        try:
            sample = nearest_to(cast, h_new)
        except NoSurfaceVisible:
            state.degraded = True
            state.proxy = h_new.copy()
            return state
        state.proxy = sample.position
        state.prev_normal = sample.normal
        state.mode = ContactMode.CONTACT
        state.friction_mode = FrictionMode.NONE
        return state

    # contact: tangent plane through the previous proxy
    n = state.prev_normal
    signed = float((h_new - state.proxy) @ n)
    if signed > 0.0 and _field_value(volume, h_new) >= 0.0:
        state.mode = ContactMode.FREE
        state.friction_mode = FrictionMode.NONE
        state.proxy = h_new.copy()
        return state

    g = h_new - signed * n
    goal, fmode = apply_friction(state, g, h_new)
    state.friction_mode = fmode
    if fmode == FrictionMode.STICK:
        # stick holds the proxy bitwise; no surface refinement
        return state
    try:
        sample = nearest_to(cast, goal)
    except NoSurfaceVisible:
        state.degraded = True
        return state
    state.proxy = sample.position
    normal = sample.normal
    if state.texture is not None:
        normal = apply_texture(normal, sample.position, state.texture)
    state.prev_normal = normal
    return state


def proxy_update_naive(state: HapticState, volume, cast: RaycastResult,
                       h_new) -> HapticState:
    """Pure nearest-point update (no tangent-plane constraint), for comparison."""
    h_new = np.asarray(h_new, dtype=np.float64)
    state = dataclasses.replace(state, hip=h_new.copy(), degraded=False)
    try:
        colliding = detect_collision(volume, h_new)
    except OutOfVolume:
        colliding = False
    if not colliding:
        state.mode = ContactMode.FREE
        state.friction_mode = FrictionMode.NONE
        state.proxy = h_new.copy()
        return state
    try:
        sample = nearest_to(cast, h_new)
    except NoSurfaceVisible:
        state.degraded = True
        return state
    state.proxy = sample.position
    state.prev_normal = sample.normal
    state.mode = ContactMode.CONTACT
    return state


TRACE_HEADER = ("timestamp_ms,hx,hy,hz,px,py,pz,fx,fy,fz,mode,friction_mode")


class HapticRenderer:
    """Haptic loop state: cached raycast, trace rows and timing.

    The loop owns its HapticState; callers feed HIP positions and receive
    immutable force samples. refresh() re-extracts the surface whenever the
    fused volume has advanced a generation.
    """

    def __init__(self, volume, pose, intrinsics, state: HapticState | None = None,
                 naive: bool = False):
        self.volume = volume
        self.pose = np.asarray(pose, dtype=np.float64)
        self.intrinsics = intrinsics
        self.state = state if state is not None else HapticState.free((0.0, 0.0, 0.0))
        self.naive = naive
        self.cast: RaycastResult | None = None
        self.trace: list[tuple] = []

    def refresh(self, force: bool = False) -> None:
        gen = getattr(self.volume, "generation", -1)
        if force or self.cast is None or self.cast.generation != gen:
            self.cast = raycast(self.volume, self.pose, self.intrinsics)

    def step(self, h_new, timestamp_ms: float = 0.0) -> ForceSample:
        if self.cast is None:
            self.refresh()
        update = proxy_update_naive if self.naive else proxy_update
        self.state = update(self.state, self.volume, self.cast, h_new)
        force = compute_force(self.state, timestamp_ms)
        s = self.state
        self.trace.append((timestamp_ms, *s.hip, *s.proxy, *force.force,
                           s.mode.value, s.friction_mode.value))
        return force

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            for row in self.trace:
                fields = [repr(float(x)) if isinstance(x, (int, float, np.floating))
                          else str(x) for x in row]
                fh.write(",".join(fields) + "\n")


def read_trace(path) -> dict:
    """Parse a trace CSV back into arrays (test and console helper)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: i for i, name in enumerate(header)}
    t = np.array([float(r[cols["timestamp_ms"]]) for r in rows])
    hip = np.array([[float(r[cols[k]]) for k in ("hx", "hy", "hz")] for r in rows])
    proxy = np.array([[float(r[cols[k]]) for k in ("px", "py", "pz")] for r in rows])
    force = np.array([[float(r[cols[k]]) for k in ("fx", "fy", "fz")] for r in rows])
    mode = [r[cols["mode"]] for r in rows]
    friction = [r[cols["friction_mode"]] for r in rows]
    return {"t": t, "hip": hip, "proxy": proxy, "force": force,
            "mode": mode, "friction_mode": friction}
