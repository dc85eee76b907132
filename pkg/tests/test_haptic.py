"""Haptic rendering tests: friction cone, force shading, analytic corner oracle."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telehaptic.camera import look_at
from telehaptic.errors import NoSurfaceVisible
from telehaptic.haptic import (BumpTexture, ContactMode, FrictionMode,
                               HapticRenderer, HapticState, apply_friction,
                               apply_texture, compute_force, detect_collision,
                               nearest_surface_point, nearest_to, proxy_update,
                               proxy_update_naive)
from telehaptic.tsdf import (RaycastResult, TsdfVolume, auto_volume,
                             integrate_frame, raycast, sample_tsdf_value)

from conftest import OracleBox, OraclePlane, TEST_INTRINSICS, render_oracle


# ---------------------------------------------------------------------------
# fixtures: fused floor and fused corner scenes
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def floor_world(intrinsics):
    pose = look_at((0.0, 0.0, 1.2), (0.0, 0.0, 0.0))
    frame = render_oracle([OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0)],
                          pose, intrinsics)
    vol = auto_volume(pose, resolution=128, voxel_size=0.01,
                      depth_min=intrinsics.depth_min)
    for _ in range(5):
        integrate_frame(vol, frame, intrinsics)
    cast = raycast(vol, pose, intrinsics)
    return vol, pose, cast


CORNER_WALL_X = 0.5
CORNER_TOP_Z = 0.4
CORNER_BOX = OracleBox(np.array([0.5, -0.3, 0.0]), np.array([0.9, 0.3, 0.4]))


@pytest.fixture(scope="module")
def corner_world(intrinsics):
    pose = look_at((-0.25, 0.0, 0.95), (0.65, 0.0, 0.0))
    prims = [OraclePlane(np.array([0.0, 0.0, 1.0]), 0.0), CORNER_BOX]
    frame = render_oracle(prims, pose, intrinsics)
    vol = auto_volume(pose, resolution=128, voxel_size=0.01,
                      depth_min=intrinsics.depth_min)
    for _ in range(8):
        integrate_frame(vol, frame, intrinsics)
    cast = raycast(vol, pose, intrinsics)
    return vol, pose, cast


class CornerOracle:
    """Hand implementation of the shaded proxy update on analytic geometry.

    Visible surfaces from the test camera: floor z=0 for x <= wall, the box
    front face x = wall for z in [0, top], and the box top z = top for
    x in [wall, 0.9].
    """

    def __init__(self):
        self.mode = "free"
        self.proxy = None
        self.normal = None

    @staticmethod
    def inside(q):
        if q[2] < 0:
            return True
        return q[0] >= CORNER_WALL_X and q[2] <= CORNER_TOP_Z

    @staticmethod
    def nearest(q):
        cands = []
        floor_pt = np.array([min(q[0], CORNER_WALL_X), q[1], 0.0])
        cands.append((floor_pt, np.array([0.0, 0.0, 1.0])))
        wall_pt = np.array([CORNER_WALL_X, q[1],
                            np.clip(q[2], 0.0, CORNER_TOP_Z)])
        cands.append((wall_pt, np.array([-1.0, 0.0, 0.0])))
        top_pt = np.array([np.clip(q[0], CORNER_WALL_X, 0.9), q[1],
                           CORNER_TOP_Z])
        cands.append((top_pt, np.array([0.0, 0.0, 1.0])))
        d = [np.linalg.norm(q - p) for p, _ in cands]
        return cands[int(np.argmin(d))]

    def step(self, h):
        h = np.asarray(h, dtype=np.float64)
        if self.mode == "free":
            if not self.inside(h):
                self.proxy = h.copy()
                return self.proxy
            self.proxy, self.normal = self.nearest(h)
            self.mode = "contact"
            return self.proxy
        signed = float((h - self.proxy) @ self.normal)
        if signed > 0 and not self.inside(h):
            self.mode = "free"
            self.proxy = h.copy()
            return self.proxy
        g = h - signed * self.normal
        self.proxy, self.normal = self.nearest(g)
        return self.proxy


def traverse_corner():
    """2 mm-step HIP path: press into floor, slide to wall, climb, press in."""
    step = 0.002
    pts = []

    def seg(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(round(np.linalg.norm(b - a) / step)))
        for i in range(1, n + 1):
            pts.append(a + (b - a) * i / n)

    pts.append(np.array([0.30, 0.0, 0.05]))
    seg((0.30, 0.0, 0.05), (0.30, 0.0, -0.01))
    seg((0.30, 0.0, -0.01), (0.49, 0.0, -0.01))
    seg((0.49, 0.0, -0.01), (0.49, 0.0, 0.365))
    seg((0.49, 0.0, 0.365), (0.55, 0.0, 0.365))
    return np.array(pts), step


# ---------------------------------------------------------------------------
# collision and nearest-point
# ---------------------------------------------------------------------------

def hand_volume(value):
    vol = TsdfVolume(resolution=64, voxel_size=0.01, origin=(0, 0, 0))
    vol.fields.tsdf[:] = value
    vol.fields.weight[:] = 1.0
    return vol


class TestCollision:
    def test_negative_field_collides(self):
        assert detect_collision(hand_volume(-0.3), (0.3, 0.3, 0.3))

    def test_positive_field_free(self):
        assert not detect_collision(hand_volume(0.3), (0.3, 0.3, 0.3))

    def test_exact_zero_is_free(self):
        assert not detect_collision(hand_volume(0.0), (0.3, 0.3, 0.3))


class TestNearestSurfacePoint:
    def test_floor_perpendicular_foot(self, floor_world, intrinsics):
        vol, pose, _ = floor_world
        sample = nearest_surface_point(vol, pose, intrinsics, (0.1, 0.2, 0.3))
        assert sample.valid
        assert np.linalg.norm(sample.position - [0.1, 0.2, 0.0]) <= vol.voxel_size

    def test_rowmajor_tie_break(self):
        positions = np.zeros((2, 2, 3))
        valid = np.zeros((2, 2), dtype=bool)
        positions[0, 1] = [1.0, 0.0, 0.0]
        positions[1, 0] = [-1.0, 0.0, 0.0]
        valid[0, 1] = valid[1, 0] = True
        cast = RaycastResult(positions, np.zeros((2, 2, 3)), valid)
        sample = nearest_to(cast, (0.0, 0.0, 0.0))  # both at distance 1
        assert sample.pixel == (0, 1)

    def test_no_surface_raises(self):
        cast = RaycastResult(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)),
                             np.zeros((2, 2), dtype=bool))
        with pytest.raises(NoSurfaceVisible):
            nearest_to(cast, (0.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# friction cone
# ---------------------------------------------------------------------------

class TestFriction:
    def contact_state(self, proxy, mu):
        return HapticState(hip=np.zeros(3), proxy=np.asarray(proxy, float),
                           prev_normal=np.array([0.0, 0.0, 1.0]),
                           mode=ContactMode.CONTACT, friction=mu)

    def test_zero_friction_always_slips_to_goal(self):
        state = self.contact_state([0.0, 0.0, 0.0], 0.0)
        g = np.array([0.05, 0.0, 0.0])
        goal, mode = apply_friction(state, g, np.array([0.05, 0.0, -0.01]))
        assert mode is FrictionMode.SLIP
        np.testing.assert_array_equal(goal, g)

    def test_inside_circle_sticks_bitwise(self):
        state = self.contact_state([0.003, 0.0, 0.0], 0.5)
        g = np.zeros(3)
        h = np.array([0.0, 0.0, -0.01])  # penetration 0.01, r = 0.005
        goal, mode = apply_friction(state, g, h)
        assert mode is FrictionMode.STICK
        np.testing.assert_array_equal(goal, state.proxy)

    def test_outside_circle_slips_to_circle_point(self):
        state = self.contact_state([0.02, 0.0, 0.0], 0.5)
        g = np.zeros(3)
        h = np.array([0.0, 0.0, -0.01])
        goal, mode = apply_friction(state, g, h)
        assert mode is FrictionMode.SLIP
        np.testing.assert_allclose(goal, [0.005, 0.0, 0.0], atol=1e-12)
        assert np.linalg.norm(goal - g) == pytest.approx(0.005)


# ---------------------------------------------------------------------------
# texture
# ---------------------------------------------------------------------------

class TestTexture:
    def test_zero_amplitude_identity(self):
        tex = BumpTexture(np.random.default_rng(0).normal(size=(16, 16)),
                          amplitude=0.0, period=0.1)
        n = np.array([0.0, 0.0, 1.0])
        out = apply_texture(n, (0.01, 0.02, 0.0), tex)
        np.testing.assert_array_equal(out, n)

    def test_sine_ridge_matches_closed_form(self):
        wavelength = 0.08
        amp = 0.004
        g = 256
        xs = (np.arange(g) + 0.5) * (wavelength / g)
        heights = np.sin(2 * np.pi * xs / wavelength)[:, None] * np.ones((1, g))
        tex = BumpTexture(heights, amplitude=amp, period=wavelength)
        n = np.array([0.0, 0.0, 1.0])
        for x in np.linspace(0.005, 0.075, 9):
            out = apply_texture(n, (x, 0.013, 0.0), tex)
            slope = amp * 2 * np.pi / wavelength * np.cos(2 * np.pi * x / wavelength)
            expect = np.array([-slope, 0.0, 1.0])
            expect /= np.linalg.norm(expect)
            cos_err = float(np.clip(out @ expect, -1, 1))
            assert np.degrees(np.arccos(cos_err)) < 0.6  # within 2 percent tilt
            assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
           st.floats(0.0, 0.05), st.integers(0, 10 ** 6))
    def test_output_always_unit(self, n_raw, amp, seed):
        n = np.asarray(n_raw)
        if np.linalg.norm(n) < 1e-3:
            return
        n = n / np.linalg.norm(n)
        rng = np.random.default_rng(seed)
        tex = BumpTexture(rng.normal(size=(8, 8)), amplitude=amp, period=0.05)
        out = apply_texture(n, rng.normal(size=3) * 0.1, tex)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# force
# ---------------------------------------------------------------------------

class TestForce:
    def test_zero_at_rest(self):
        s = HapticState.free((0.1, 0.2, 0.3))
        np.testing.assert_array_equal(compute_force(s).force, np.zeros(3))

    def test_spring_formula(self):
        s = HapticState.free((0.0, 0.0, 0.0))
        s.proxy = np.array([0.0, 0.0, 0.01])
        np.testing.assert_allclose(compute_force(s).force, [0, 0, 5.0])

    def test_clamped_to_force_max(self):
        s = HapticState.free((0.0, 0.0, 0.0))
        s.proxy = np.array([0.0, 0.0, 0.04])  # raw spring force 20 N
        f = compute_force(s).force
        assert np.linalg.norm(f) == pytest.approx(12.0)
        np.testing.assert_allclose(f / np.linalg.norm(f), [0, 0, 1.0])


# ---------------------------------------------------------------------------
# proxy update
# ---------------------------------------------------------------------------

class TestProxyUpdate:
    def test_flat_plane_perpendicular_drop(self, floor_world):
        vol, _, cast = floor_world
        state = HapticState(hip=np.zeros(3), proxy=np.zeros(3),
                            prev_normal=np.array([0.0, 0.0, 1.0]),
                            mode=ContactMode.CONTACT)
        state = proxy_update(state, vol, cast, (0.05, 0.0, -0.01))
        assert state.mode is ContactMode.CONTACT
        assert np.linalg.norm(state.proxy - [0.05, 0.0, 0.0]) <= 1.2 * vol.voxel_size

    def test_release_above_surface(self, floor_world):
        vol, _, cast = floor_world
        state = HapticState(hip=np.zeros(3), proxy=np.zeros(3),
                            prev_normal=np.array([0.0, 0.0, 1.0]),
                            mode=ContactMode.CONTACT)
        h_up = np.array([0.0, 0.0, 0.2])
        assert sample_tsdf_value(vol, h_up) >= 0.2  # well clear of the floor
        state = proxy_update(state, vol, cast, h_up)
        assert state.mode is ContactMode.FREE
        np.testing.assert_array_equal(state.proxy, h_up)

    def test_free_motion_tracks_hip(self, floor_world):
        vol, _, cast = floor_world
        state = HapticState.free((0.0, 0.0, 0.3))
        state = proxy_update(state, vol, cast, (0.02, 0.01, 0.31))
        assert state.mode is ContactMode.FREE
        np.testing.assert_array_equal(state.proxy, state.hip)

    def test_degraded_on_empty_cast_keeps_proxy(self, floor_world):
        vol, _, _ = floor_world
        empty = RaycastResult(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)),
                              np.zeros((2, 2), dtype=bool))
        state = HapticState(hip=np.zeros(3),
                            proxy=np.array([0.01, 0.0, 0.0]),
                            prev_normal=np.array([0.0, 0.0, 1.0]),
                            mode=ContactMode.CONTACT)
        out = proxy_update(state, vol, empty, (0.02, 0.0, -0.01))
        assert out.degraded
        np.testing.assert_array_equal(out.proxy, [0.01, 0.0, 0.0])

    def test_stick_is_bitwise_stable(self, floor_world):
        vol, _, cast = floor_world
        state = HapticState(hip=np.zeros(3), proxy=np.zeros(3),
                            prev_normal=np.array([0.0, 0.0, 1.0]),
                            mode=ContactMode.CONTACT, friction=0.8)
        state = proxy_update(state, vol, cast, (0.0, 0.0, -0.02))
        anchor = state.proxy.copy()
        for k in range(5):
            # tiny lateral wiggle inside the friction circle
            state = proxy_update(state, vol, cast,
                                 (0.001 * (k % 2), 0.0, -0.02))
            assert state.friction_mode is FrictionMode.STICK
            assert np.array_equal(state.proxy, anchor)

    def test_zero_friction_path_equals_frictionless(self, floor_world):
        vol, _, cast = floor_world
        path = [(0.01 * k, 0.002 * k, -0.008) for k in range(10)]
        s_mu0 = HapticState.free((0.0, 0.0, 0.1))
        s_mu0.friction = 0.0
        proxies_mu0 = []
        for h in path:
            s_mu0 = proxy_update(s_mu0, vol, cast, h)
            proxies_mu0.append(s_mu0.proxy.copy())

        # frictionless reference: same update with the friction step skipped
        s_ref = HapticState.free((0.0, 0.0, 0.1))
        proxies_ref = []
        for h in path:
            h = np.asarray(h, dtype=np.float64)
            if s_ref.mode is ContactMode.FREE:
                if not detect_collision(vol, h):
                    s_ref = dataclasses.replace(s_ref, hip=h, proxy=h.copy())
                else:
                    sm = nearest_to(cast, h)
                    s_ref = dataclasses.replace(s_ref, hip=h, proxy=sm.position,
                                                prev_normal=sm.normal,
                                                mode=ContactMode.CONTACT)
            else:
                n = s_ref.prev_normal
                signed = float((h - s_ref.proxy) @ n)
                if signed > 0 and sample_tsdf_value(vol, h, outside=1.0) >= 0:
                    s_ref = dataclasses.replace(s_ref, hip=h, proxy=h.copy(),
                                                mode=ContactMode.FREE)
                else:
                    g = h - signed * n
                    sm = nearest_to(cast, g)
                    s_ref = dataclasses.replace(s_ref, hip=h, proxy=sm.position,
                                                prev_normal=sm.normal)
            proxies_ref.append(s_ref.proxy.copy())
        for a, b in zip(proxies_mu0, proxies_ref):
            assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# corner scene: continuity oracle and the naive jump
# ---------------------------------------------------------------------------

class TestCornerTraverse:
    def run_renderer(self, world, naive):
        vol, pose, _ = world
        path, step = traverse_corner()
        renderer = HapticRenderer(vol, pose, TEST_INTRINSICS,
                                  HapticState.free(path[0]), naive=naive)
        proxies = []
        modes = []
        for k, h in enumerate(path):
            renderer.step(h, timestamp_ms=float(k))
            proxies.append(renderer.state.proxy.copy())
            modes.append(renderer.state.mode)
        return np.array(proxies), modes, path, step

    def test_shaded_proxies_continuous_and_match_oracle(self, corner_world):
        proxies, modes, path, step = self.run_renderer(corner_world, naive=False)
        vol = corner_world[0]
        hip_steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
        proxy_steps = np.linalg.norm(np.diff(proxies, axis=0), axis=1)
        assert proxy_steps.max() <= hip_steps.max() + vol.voxel_size

        oracle = CornerOracle()
        oracle_proxies = np.array([oracle.step(h) for h in path])
        contact = np.array([m is ContactMode.CONTACT for m in modes])
        err = np.linalg.norm(proxies[contact] - oracle_proxies[contact], axis=1)
        assert err.max() <= 0.015

    def test_naive_update_jumps_at_the_edge(self, corner_world):
        proxies, _, path, step = self.run_renderer(corner_world, naive=True)
        proxy_steps = np.linalg.norm(np.diff(proxies, axis=0), axis=1)
        assert proxy_steps.max() > 10 * step

    def test_contact_proxy_stays_on_surface(self, corner_world):
        vol, _, _ = corner_world
        proxies, modes, _, _ = self.run_renderer(corner_world, naive=False)
        band = 2 * vol.voxel_size / vol.truncation
        for proxy, mode in zip(proxies, modes):
            if mode is ContactMode.CONTACT:
                assert abs(sample_tsdf_value(vol, proxy, outside=0.0)) <= band

    def test_force_direction_never_reverses_on_floor(self, floor_world):
        vol, pose, _ = floor_world
        renderer = HapticRenderer(vol, pose, TEST_INTRINSICS,
                                  HapticState.free((0.0, 0.0, 0.1)))
        xs = np.arange(-0.1, 0.25, 0.001)
        prev_f = None
        for k, x in enumerate(xs):
            f = renderer.step((x, 0.05, -0.008), float(k)).force
            if renderer.state.mode is ContactMode.CONTACT and prev_f is not None:
                na, nb = np.linalg.norm(prev_f), np.linalg.norm(f)
                if na > 1e-9 and nb > 1e-9:
                    assert prev_f @ f / (na * nb) > 0.0
            prev_f = f if renderer.state.mode is ContactMode.CONTACT else None

    def test_trace_roundtrip(self, corner_world, tmp_path):
        from telehaptic.haptic import read_trace
        vol, pose, _ = corner_world
        renderer = HapticRenderer(vol, pose, TEST_INTRINSICS,
                                  HapticState.free((0.3, 0.0, 0.05)))
        for k in range(5):
            renderer.step((0.3, 0.0, 0.05 - 0.01 * k), float(k))
        path = tmp_path / "trace.csv"
        renderer.write_trace(path)
        data = read_trace(path)
        assert data["t"].shape == (5,)
        assert data["hip"].shape == (5, 3)
        assert set(data["mode"]) <= {"free", "contact"}
