"""Region growing, label fusion and metric tests against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telehaptic.camera import CameraIntrinsics, RgbdFrame, look_at
from telehaptic.errors import (BehindCamera, DimensionMismatch, InvalidSeed,
                               OutsideImage, UnknownLabel)
from telehaptic.segment import (NEIGHBOR_OFFSETS, RegionParams, SegMetrics,
                                evaluate, fuse_labels, load_label_png,
                                object_extent, region_grow, rgb_to_lab,
                                save_label_png, seed_from_mark)
from telehaptic.tsdf import TsdfVolume

from oracles import brute_bde, brute_gce, brute_pri, flood_oracle

SEG_INTR = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0,
                            width=32, height=32, depth_min=0.1, depth_max=5.0)


def test_rgb_to_lab_matches_skimage():
    from skimage.color import rgb2lab

    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
    mine = rgb_to_lab(rgb)
    ref = rgb2lab(rgb)
    np.testing.assert_allclose(mine, ref, atol=0.02)


class TestSeedFromMark:
    INTR = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640,
                            height=480)

    def test_principal_axis(self):
        assert seed_from_mark((0, 0, 1.0), np.eye(4), self.INTR) == (320, 240)

    def test_pinhole_offset(self):
        assert seed_from_mark((0.1, 0, 1.0), np.eye(4), self.INTR) == (370, 240)

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            seed_from_mark((0, 0, -1.0), np.eye(4), self.INTR)

    def test_outside_image(self):
        with pytest.raises(OutsideImage):
            seed_from_mark((5.0, 0, 1.0), np.eye(4), self.INTR)


def two_region_image():
    """Left half gray-blue, right half orange, flat depth, hard color edge."""
    color = np.zeros((32, 32, 3), dtype=np.uint8)
    color[:, :16] = (90, 110, 140)
    color[:, 16:] = (200, 120, 40)
    depth = np.full((32, 32), 800, dtype=np.uint16)
    return color, depth


class TestRegionGrow:
    def test_uniform_image_floods_everything(self):
        color = np.full((32, 32, 3), 120, dtype=np.uint8)
        depth = np.full((32, 32), 900, dtype=np.uint16)
        labels, stats = region_grow(color, depth, (5, 7),
                                    RegionParams(threshold=1.0), SEG_INTR)
        assert (labels == 1).all()
        assert stats.count == 32 * 32

    def test_two_regions_matches_flood_oracle(self):
        color, depth = two_region_image()
        params = RegionParams(compactness=10, grid_interval=10, threshold=12.0)
        labels, _ = region_grow(color, depth, (4, 10), params, SEG_INTR)
        oracle = flood_oracle(color, depth, (4, 10), params.threshold,
                              params.beta, SEG_INTR, NEIGHBOR_OFFSETS)
        np.testing.assert_array_equal(labels, oracle)
        assert (labels[:, :16] == 1).all()
        assert (labels[:, 16:] == 0).all()

    def test_oracle_agreement_on_noisy_images(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            color = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
            depth = rng.integers(500, 1500, size=(32, 32)).astype(np.uint16)
            depth[rng.random((32, 32)) < 0.1] = 0
            seed = (int(rng.integers(0, 32)), int(rng.integers(0, 32)))
            if depth[seed[1], seed[0]] == 0:
                continue
            params = RegionParams(threshold=18.0)
            labels, _ = region_grow(color, depth, seed, params, SEG_INTR)
            oracle = flood_oracle(color, depth, seed, params.threshold,
                                  params.beta, SEG_INTR, NEIGHBOR_OFFSETS)
            np.testing.assert_array_equal(labels, oracle)

    def test_zero_threshold_keeps_seed_only(self):
        rng = np.random.default_rng(1)
        color = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        depth = np.full((32, 32), 700, dtype=np.uint16)
        labels, stats = region_grow(color, depth, (8, 8),
                                    RegionParams(threshold=0.0), SEG_INTR)
        assert stats.count == 1
        assert labels.sum() == 1
        assert labels[8, 8] == 1

    def test_invalid_seed_raises(self):
        color, depth = two_region_image()
        depth[10, 4] = 0
        with pytest.raises(InvalidSeed):
            region_grow(color, depth, (4, 10), RegionParams(), SEG_INTR)

    def test_region_is_connected_and_contains_seed(self):
        from scipy import ndimage

        color, depth = two_region_image()
        labels, _ = region_grow(color, depth, (4, 10),
                                RegionParams(threshold=12.0), SEG_INTR)
        assert labels[10, 4] == 1
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        _, n_comp = ndimage.label(labels > 0, structure=structure)
        assert n_comp == 1

    def test_frozen_stats_monotone_in_threshold(self):
        color, depth = two_region_image()
        color[:, :16] += np.random.default_rng(2).integers(
            0, 12, size=(32, 16, 3)).astype(np.uint8)
        prev = None
        for thr in (4.0, 8.0, 16.0, 30.0):
            labels, _ = region_grow(color, depth, (4, 10),
                                    RegionParams(threshold=thr), SEG_INTR,
                                    frozen_stats=True)
            region = labels > 0
            if prev is not None:
                assert (region | prev == region).all()  # superset of smaller thr
            prev = region


class TestFuseLabels:
    def setup_world(self):
        intr = SEG_INTR
        pose = look_at((0, 0, 0), (0, 0, 1.0))
        depth = np.full(intr.shape, 1000, dtype=np.uint16)
        color = np.full(intr.shape + (3,), 128, dtype=np.uint8)
        frame = RgbdFrame(seq=0, timestamp_ms=0, depth=depth, color=color,
                          pose=pose)
        vol = TsdfVolume(resolution=64, voxel_size=0.01,
                         origin=(-0.315, -0.315, 0.685))
        return vol, frame, intr

    def full_labels(self, intr, value):
        return np.full(intr.shape, value, dtype=np.uint16)

    def test_first_write(self):
        vol, frame, intr = self.setup_world()
        fuse_labels(vol, self.full_labels(intr, 1), frame, intr)
        # the voxel on the surface at (0, 0, 1.0)
        assert vol.label[31, 31, 31] == 1
        assert vol.label_weight[31, 31, 31] == 1.0

    def test_reinforce_then_decrement(self):
        vol, frame, intr = self.setup_world()
        fuse_labels(vol, self.full_labels(intr, 1), frame, intr)
        fuse_labels(vol, self.full_labels(intr, 1), frame, intr)
        assert vol.label_weight[31, 31, 31] == 2.0
        fuse_labels(vol, self.full_labels(intr, 2), frame, intr)
        assert vol.label[31, 31, 31] == 1
        assert vol.label_weight[31, 31, 31] == 1.0

    def test_swap_at_weight_one(self):
        vol, frame, intr = self.setup_world()
        fuse_labels(vol, self.full_labels(intr, 1), frame, intr)
        fuse_labels(vol, self.full_labels(intr, 2), frame, intr)
        assert vol.label[31, 31, 31] == 2
        assert vol.label_weight[31, 31, 31] == 1.0

    def test_unlabeled_observation_is_a_noop(self):
        vol, frame, intr = self.setup_world()
        fuse_labels(vol, self.full_labels(intr, 1), frame, intr)
        before_label = vol.label.copy()
        before_weight = vol.label_weight.copy()
        fuse_labels(vol, self.full_labels(intr, 0), frame, intr)
        np.testing.assert_array_equal(vol.label, before_label)
        np.testing.assert_array_equal(vol.label_weight, before_weight)

    def test_never_labeled_with_nonpositive_weight(self):
        vol, frame, intr = self.setup_world()
        for lab in (1, 2, 1, 3, 3, 2):
            fuse_labels(vol, self.full_labels(intr, lab), frame, intr)
        bad = (vol.label != 0) & (vol.label_weight <= 0)
        assert not bad.any()

    def test_dimension_mismatch(self):
        vol, frame, intr = self.setup_world()
        with pytest.raises(DimensionMismatch):
            fuse_labels(vol, np.zeros((3, 3), dtype=np.uint16), frame, intr)


class TestObjectExtent:
    def test_box_centroid_and_bounds(self):
        vol = TsdfVolume(resolution=64, voxel_size=0.01, origin=(0, 0, 0))
        vol.fields.ensure_labels()
        vol.label[10:20, 12:22, 5:9] = 4
        vol.label_weight[10:20, 12:22, 5:9] = 1.0
        centroid, bounds = object_extent(vol, 4)
        np.testing.assert_allclose(centroid, [0.15, 0.17, 0.07], atol=1e-9)
        np.testing.assert_allclose(bounds[0], [0.105, 0.125, 0.055], atol=1e-9)
        np.testing.assert_allclose(bounds[1], [0.195, 0.215, 0.085], atol=1e-9)

    def test_single_voxel(self):
        vol = TsdfVolume(resolution=64, voxel_size=0.01, origin=(0, 0, 0))
        vol.fields.ensure_labels()
        vol.label[3, 4, 5] = 9
        vol.label_weight[3, 4, 5] = 2.0
        centroid, bounds = object_extent(vol, 9)
        np.testing.assert_allclose(centroid, [0.035, 0.045, 0.055])
        np.testing.assert_allclose(bounds[0], bounds[1])

    def test_unknown_label(self):
        vol = TsdfVolume(resolution=64, voxel_size=0.01, origin=(0, 0, 0))
        with pytest.raises(UnknownLabel):
            object_extent(vol, 2)


class TestMetrics:
    def test_identical_segmentations(self):
        seg = np.array([[1, 1, 2], [1, 2, 2], [3, 3, 3]])
        m = evaluate(seg, seg)
        assert m.pri == 1.0
        assert m.bde == 0.0
        assert m.gce == 0.0

    def test_refinement_gives_zero_gce(self):
        truth = np.zeros((4, 4), dtype=int)
        truth[:, 2:] = 1
        seg = truth.copy()
        seg[:2, :2] = 5  # split one truth region into two
        assert evaluate(seg, truth).gce == 0.0

    def test_matches_brute_force_on_small_images(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            seg = rng.integers(0, 2, size=(4, 4))
            truth = rng.integers(0, 2, size=(4, 4))
            m = evaluate(seg, truth)
            assert m.pri == pytest.approx(brute_pri(seg, truth), abs=1e-12)
            assert m.bde == pytest.approx(brute_bde(seg, truth), abs=1e-12)
            assert m.gce == pytest.approx(brute_gce(seg, truth), abs=1e-12)

    def test_bde_symmetric(self):
        rng = np.random.default_rng(11)
        a = rng.integers(0, 3, size=(8, 8))
        b = rng.integers(0, 3, size=(8, 8))
        assert evaluate(a, b).bde == pytest.approx(evaluate(b, a).bde)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_pri_gce_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        seg = rng.integers(0, 4, size=(6, 6))
        truth = rng.integers(0, 4, size=(6, 6))
        m = evaluate(seg, truth)
        assert 0.0 <= m.pri <= 1.0
        assert 0.0 <= m.gce <= 1.0
        assert m.bde >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            evaluate(np.zeros((3, 3)), np.zeros((4, 4)))


def test_label_png_roundtrip(tmp_path):
    labels = np.zeros((10, 12), dtype=np.uint16)
    labels[2:5, 3:9] = 700  # above 8-bit range on purpose
    path = tmp_path / "labels.png"
    save_label_png(labels, path)
    np.testing.assert_array_equal(load_label_png(path), labels)


def test_metrics_csv_row():
    row = SegMetrics(pri=1.0, bde=0.0, gce=0.25).csv_row()
    assert row == "1.0,0.0,0.25"
