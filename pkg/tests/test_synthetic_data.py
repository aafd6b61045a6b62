import filecmp
import os

import numpy as np
import pytest
import torch

from camera_geometry import Intrinsics, backproject, canonical_pose, orbit_pose, parse_pose_label_lenient
from config import config_from_dict
from conftest import SMALL
from errors import DependencyError, InvalidArgumentError
from synthetic_data import (
    MultiViewDataset,
    load_view,
    make_dataset,
    read_dataset_meta,
    read_factors,
    render_scene,
    sample_factors,
    scene_dir,
    scene_sdf,
    split_scenes,
)

INTR = Intrinsics(2.0, 2.0, 0.5, 0.5)
CENTERED = {"radius": 0.4, "center": [0.0, 0.0, 0.0], "hue": 0.3, "shade": 0.5}


class TestRenderScene:
    def test_center_pixel_hits_sphere_front(self, small_config):
        _, depth = render_scene(CENTERED, small_config.dataset.scene, canonical_pose(2.7), INTR, (33, 33))
        assert depth[16, 16].item() == pytest.approx(2.7 - 0.4, abs=1e-9)

    def test_background_card_and_empty_pixels(self, small_config):
        spec = small_config.dataset.scene
        image, depth = render_scene(CENTERED, spec, canonical_pose(2.7), INTR, (33, 33))
        assert depth[16, 4].item() == pytest.approx(2.7 + spec.card_depth, abs=1e-9)
        torch.testing.assert_close(image[:, 16, 4], torch.full((3,), 0.5, dtype=torch.float64))
        assert depth[0, 0].item() == 0.0
        assert not image[:, 0, 0].any()

    def test_depth_is_camera_z(self, small_config):
        spec = small_config.dataset.scene
        _, depth = render_scene(CENTERED, spec, canonical_pose(2.7), INTR, (33, 33))
        card = depth[depth > 2.7 + spec.card_depth - 1e-6]
        torch.testing.assert_close(card, torch.full_like(card, 2.7 + spec.card_depth))

    def test_surface_points_have_zero_distance(self, small_config):
        spec = small_config.dataset.scene
        pose = orbit_pose(30.0, 0.0, 2.7)
        _, depth = render_scene(CENTERED, spec, pose, INTR, (16, 16))
        points = backproject(depth, pose, INTR)
        assert points.shape[0] > 0
        assert scene_sdf(points, CENTERED, spec).abs().max().item() < 1e-9


class TestSampleFactors:
    def test_ranges(self, small_config):
        spec = small_config.dataset.scene
        factors = sample_factors(spec, np.random.default_rng(0))
        assert spec.radius_range[0] <= factors["radius"] <= spec.radius_range[1]
        assert all(abs(c) <= spec.position_jitter for c in factors["center"][:2])
        assert factors["yaws"] == spec.yaws

    def test_rejects_bad_radius(self, small_config):
        spec = small_config.dataset.scene
        spec.radius_range = [0.5, 0.3]
        with pytest.raises(InvalidArgumentError):
            sample_factors(spec, np.random.default_rng(0))

    def test_rejects_yaw_beyond_limit(self, small_config):
        spec = small_config.dataset.scene
        spec.yaws = [0.0, 75.0]
        with pytest.raises(InvalidArgumentError):
            sample_factors(spec, np.random.default_rng(0))


class TestMakeDataset:
    def test_same_seed_same_bytes(self, tmp_path):
        cfg = config_from_dict(SMALL)
        a = make_dataset(str(tmp_path / "a"), cfg, n=2)
        b = make_dataset(str(tmp_path / "b"), cfg, n=2)
        names = sorted(os.listdir(scene_dir(a, 1)))
        assert len(names) == 3 * 5 + 1
        match, mismatch, errors = filecmp.cmpfiles(scene_dir(a, 1), scene_dir(b, 1), names, shallow=False)
        assert not mismatch and not errors
        assert filecmp.cmp(os.path.join(a, "dataset.json"), os.path.join(b, "dataset.json"), shallow=False)

    def test_different_seed_differs(self, tmp_path):
        cfg = config_from_dict(SMALL)
        make_dataset(str(tmp_path / "a"), cfg, n=1, seed=1)
        make_dataset(str(tmp_path / "b"), cfg, n=1, seed=2)
        assert read_factors(str(tmp_path / "a"), 0) != read_factors(str(tmp_path / "b"), 0)

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            make_dataset(str(tmp_path), config_from_dict(SMALL), n=0)

    def test_stored_depth_matches_render(self, dataset_root, small_config):
        factors = read_factors(dataset_root, 0)
        view = load_view(dataset_root, 0, 3)
        pose = orbit_pose(factors["yaws"][3], factors["pitch"], small_config.camera.distance)
        _, depth = render_scene(factors, small_config.dataset.scene, pose, INTR, (32, 32))
        torch.testing.assert_close(view["depth"], depth.float())


class TestDataset:
    def test_meta_and_split(self, dataset_root):
        meta = read_dataset_meta(dataset_root)
        assert meta["num_scenes"] == 3 and meta["eval_scenes"] == 1 and meta["resolution"] == 32
        assert split_scenes(meta) == ([0, 1], [2])

    def test_items(self, dataset_root):
        dataset = MultiViewDataset(dataset_root, scenes=[1, 2])
        assert len(dataset) == 2 * 5
        item = dataset[7]
        assert (item["scene"], item["view"], item["scene_slot"]) == (2, 2, 1)
        assert item["image"].shape == (3, 32, 32) and item["depth"].shape == (32, 32)
        assert 0.0 <= item["image"].min() and item["image"].max() <= 1.0

    def test_labels_encode_view_pose(self, dataset_root, small_config):
        meta = read_dataset_meta(dataset_root)
        for k, yaw in enumerate(meta["yaws"]):
            pose, intr = parse_pose_label_lenient(load_view(dataset_root, 0, k)["label"])
            expected = orbit_pose(yaw, 0.0, small_config.camera.distance)
            torch.testing.assert_close(pose.rotation, expected.rotation, atol=1e-6, rtol=0)
            torch.testing.assert_close(pose.translation, expected.translation, atol=1e-6, rtol=0)
            assert intr.fx == pytest.approx(small_config.camera.fx)

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DependencyError):
            read_dataset_meta(str(tmp_path))
        with pytest.raises(DependencyError):
            MultiViewDataset(str(tmp_path))
