"""Robot-to-server transport: frame wire format, delay injection, RTT.

The frame layout is normative and bit-exact: little-endian magic "RGBD",
u32 seq, u64 timestamp_ms, u16 width, u16 height, 12 f64 of the row-major
3x4 camera-to-world pose, then u16 depth millimeters and 3xu8 color. On a
stream each message is length-prefixed (u32) so parsing is incremental.

Delay injection happens in-process against an injectable clock so tests and
scenarios are deterministic; channels never reorder or duplicate, and an
optional throughput cap spaces deliveries at the configured frame rate.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import threading
import time as _time
from collections import deque

import numpy as np

from .camera import RgbdFrame
from .errors import ChannelTimeout, MalformedFrame, VersionMismatch

FRAME_MAGIC = b"RGBD"
_HEADER = struct.Struct("<4sIQHH")  # magic, seq, timestamp_ms, width, height
_POSE = struct.Struct("<12d")
ENV_DELAY_OVERRIDE = "TELEHAPTIC_DELAY_MS"


def encode_frame(frame: RgbdFrame) -> bytes:
    h, w = frame.depth.shape
    pose = np.ascontiguousarray(frame.pose[:3, :4], dtype="<f8")
    parts = [
        _HEADER.pack(FRAME_MAGIC, frame.seq & 0xFFFFFFFF,
                     int(frame.timestamp_ms) & 0xFFFFFFFFFFFFFFFF, w, h),
        _POSE.pack(*pose.ravel()),
        np.ascontiguousarray(frame.depth, dtype="<u2").tobytes(),
        np.ascontiguousarray(frame.color, dtype=np.uint8).tobytes(),
    ]
    return b"".join(parts)


def frame_byte_length(width: int, height: int) -> int:
    return _HEADER.size + _POSE.size + width * height * 2 + width * height * 3


def decode_frame(buf: bytes) -> RgbdFrame:
    if len(buf) < _HEADER.size:
        raise MalformedFrame(f"buffer of {len(buf)} bytes is shorter than the header")
    magic, seq, t_ms, w, h = _HEADER.unpack_from(buf, 0)
    if magic != FRAME_MAGIC:
        if magic[:3] == FRAME_MAGIC[:3]:
            raise VersionMismatch(f"unsupported frame tag {magic!r}")
        raise MalformedFrame(f"bad magic {magic!r}")
    expected = frame_byte_length(w, h)
    if len(buf) != expected:
        raise MalformedFrame(f"frame of {len(buf)} bytes, expected {expected}")
    off = _HEADER.size
    pose34 = np.array(_POSE.unpack_from(buf, off)).reshape(3, 4)
    off += _POSE.size
    depth = np.frombuffer(buf, dtype="<u2", count=w * h, offset=off)
    off += w * h * 2
    color = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=off)
    pose = np.eye(4)
    pose[:3, :4] = pose34
    return RgbdFrame(seq=int(seq), timestamp_ms=int(t_ms),
                     depth=depth.reshape(h, w).copy(),
                     color=color.reshape(h, w, 3).copy(), pose=pose)


def write_frame(fh, frame: RgbdFrame) -> None:
    payload = encode_frame(frame)
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


class FrameStreamReader:
    """Incremental parser over length-prefixed frame bytes."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        """Consume bytes; yields every complete frame now available."""
        self._buf.extend(data)
        while True:
            if len(self._buf) < 4:
                return
            (n,) = struct.unpack_from("<I", self._buf, 0)
            if len(self._buf) < 4 + n:
                return
            payload = bytes(self._buf[4:4 + n])
            del self._buf[:4 + n]
            yield decode_frame(payload)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def read_session_frames(path):
    """All frames from a session file (length-prefixed FrameMessage bytes)."""
    reader = FrameStreamReader()
    frames = []
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(1 << 20)
            if not chunk:
                break
            frames.extend(reader.feed(chunk))
    if reader.pending_bytes:
        raise MalformedFrame(f"{reader.pending_bytes} trailing bytes in session")
    return frames


# ---------------------------------------------------------------------------
# clocks and delayed channels
# ---------------------------------------------------------------------------

class WallClock:
    def now(self) -> float:
        return _time.monotonic()


class VirtualClock:
    """Deterministic manually-advanced clock (seconds)."""

    def __init__(self, start: float = 0.0):
        self._t = float(start)

    def now(self) -> float:
        return self._t

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("time only advances")
        self._t += dt
        return self._t


@dataclasses.dataclass(frozen=True)
class Fixed:
    """Constant one-way delay in milliseconds."""

    delay_ms: float

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError("delay must be nonnegative")

    def one_way_s(self, elapsed_s: float) -> float:
        return self.delay_ms * 1e-3


@dataclasses.dataclass(frozen=True)
class Ramp:
    """One-way delay ramping d0 -> d1 ms over the given duration."""

    d0_ms: float
    d1_ms: float
    duration_s: float

    def __post_init__(self):
        if self.d0_ms < 0 or self.d1_ms < 0 or self.duration_s <= 0:
            raise ValueError("delays nonnegative, duration positive")

    def one_way_s(self, elapsed_s: float) -> float:
        f = min(max(elapsed_s / self.duration_s, 0.0), 1.0)
        return (self.d0_ms + (self.d1_ms - self.d0_ms) * f) * 1e-3


DelayModel = Fixed | Ramp


def resolve_delay_model(model: DelayModel) -> DelayModel:
    """Apply the TELEHAPTIC_DELAY_MS override to Fixed models."""
    override = os.environ.get(ENV_DELAY_OVERRIDE)
    if override and isinstance(model, Fixed):
        return Fixed(float(override))
    return model


class DelayedChannel:
    """FIFO in-process channel releasing messages after the one-way delay.

    Messages become visible no earlier than send_time + delay(send_time);
    release times are forced monotone so ramping delays never reorder, and an
    optional fps cap spaces releases by at least 1/fps. Closing drops queued
    messages.
    """

    def __init__(self, model: DelayModel = Fixed(0.0), clock=None,
                 fps_cap: float | None = None):
        self.model = resolve_delay_model(model)
        self.clock = clock if clock is not None else WallClock()
        self.fps_cap = fps_cap
        self._queue: deque = deque()
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._t0 = self.clock.now()
        self._last_release = -np.inf
        self._closed = False

    def send(self, message) -> None:
        with self._lock:
            if self._closed:
                raise ValueError("channel closed")
            t = self.clock.now()
            release = t + self.model.one_way_s(t - self._t0)
            if release < self._last_release:
                release = self._last_release
            if self.fps_cap:
                spaced = self._last_release + 1.0 / self.fps_cap
                if release < spaced:
                    release = spaced
            self._last_release = release
            self._queue.append((release, message))
            self._ready.notify_all()

    def poll(self) -> list:
        """All messages due by the clock's current time (non-blocking)."""
        now = self.clock.now()
        out = []
        with self._lock:
            while self._queue and self._queue[0][0] <= now:
                out.append(self._queue.popleft()[1])
        return out

    def recv(self, timeout: float = 2.0):
        """Blocking receive for wall-clock channels."""
        deadline = _time.monotonic() + timeout
        with self._lock:
            while True:
                now = self.clock.now()
                if self._queue and self._queue[0][0] <= now:
                    return self._queue.popleft()[1]
                if self._closed:
                    raise ChannelTimeout("channel closed")
                wait = deadline - _time.monotonic()
                if wait <= 0:
                    raise ChannelTimeout(f"no message within {timeout} s")
                if self._queue:
                    wait = min(wait, max(self._queue[0][0] - now, 0.0) + 1e-4)
                self._ready.wait(wait)

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._queue.clear()
            self._ready.notify_all()


class ChannelPair:
    """Bidirectional link: uplink robot->server, downlink server->robot."""

    def __init__(self, model: DelayModel, clock=None, fps_cap=None):
        self.clock = clock if clock is not None else WallClock()
        self.uplink = DelayedChannel(model, self.clock, fps_cap=fps_cap)
        self.downlink = DelayedChannel(model, self.clock)


class RttEstimator:
    """Exponentially smoothed round-trip estimate (half-life in seconds)."""

    def __init__(self, half_life_s: float = 2.0):
        self.half_life_s = half_life_s
        self.estimate: float | None = None
        self._last_t: float | None = None

    def add_sample(self, rtt_s: float, now_s: float) -> float:
        if self.estimate is None:
            self.estimate = float(rtt_s)
        else:
            dt = max(now_s - (self._last_t if self._last_t is not None else now_s),
                     0.0)
            w = 0.5 ** (dt / self.half_life_s) if self.half_life_s > 0 else 0.0
            self.estimate = w * self.estimate + (1.0 - w) * float(rtt_s)
        self._last_t = now_s
        return self.estimate


def measure_rtt(pair: ChannelPair, clock: VirtualClock, pings: int = 5,
                spacing_s: float = 0.5, timeout_s: float = 2.0,
                half_life_s: float = 2.0) -> float:
    """Ping over the pair with an immediate echo peer; returns smoothed RTT.

    Runs on a virtual clock: time advances in small steps until each echo
    arrives or the timeout expires.
    """
    est = RttEstimator(half_life_s)
    step = 1e-3
    for k in range(pings):
        t_send = clock.now()
        pair.downlink.send(("ping", k, t_send))
        echoed = False
        while clock.now() - t_send < timeout_s:
            for msg in pair.downlink.poll():
                # echo side: bounce straight back through the uplink
                pair.uplink.send(("pong", msg[1], msg[2]))
            got = False
            for msg in pair.uplink.poll():
                if msg[0] == "pong":
                    est.add_sample(clock.now() - msg[2], clock.now())
                    got = True
            if got:
                echoed = True
                break
            clock.advance(step)
        if not echoed:
            raise ChannelTimeout(f"ping {k} unanswered after {timeout_s} s")
        clock.advance(spacing_s)
    return float(est.estimate)
