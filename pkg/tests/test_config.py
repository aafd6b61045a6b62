import json

import pytest
import torch

from config import (
    GeneratorConfig,
    LossWeights,
    TriInvertConfig,
    config_from_dict,
    config_to_json,
    load_config,
    outputs_root,
    select_device,
)
from errors import InvalidArgumentError


class TestGeneratorLayers:
    @pytest.mark.parametrize("resolution,num_ws,tap,tap_res", [(16, 6, 2, 8), (32, 8, 4, 16), (64, 10, 6, 32)])
    def test_layer_counts(self, resolution, num_ws, tap, tap_res):
        cfg = GeneratorConfig(plane_resolution=resolution)
        assert (cfg.num_ws, cfg.tap_index, cfg.tap_resolution) == (num_ws, tap, tap_res)
        assert cfg.tap_resolution == resolution // 2

    def test_explicit_tap_layer(self):
        assert GeneratorConfig(plane_resolution=32, tap_layer=1).tap_resolution == 8

    @pytest.mark.parametrize("resolution", [4, 12, 48])
    def test_rejects_bad_resolution(self, resolution):
        with pytest.raises(InvalidArgumentError):
            GeneratorConfig(plane_resolution=resolution).num_ws

    def test_rejects_tap_on_last_layer(self):
        with pytest.raises(InvalidArgumentError):
            GeneratorConfig(plane_resolution=32, tap_layer=7).tap_index


class TestDefaults:
    def test_loss_weights(self):
        w = LossWeights()
        assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5, w.lambda6, w.lambda7) == \
            (1.0, 0.8, 0.25, 0.05, 5.0, 0.001, 0.0001)
        assert w.r1_gamma == 10.0 and w.r1_squared

    def test_learning_rates(self):
        cfg = TriInvertConfig()
        assert cfg.afa.lr == 2.5e-5
        assert cfg.stage1.lr_encoder == 1e-4
        assert cfg.stage1.stage_thresholds == {"coarse": 0, "mid": 4000, "fine": 8000}


class TestConfigFromDict:
    def test_nested_values(self):
        cfg = config_from_dict({"seed": 4, "afa": {"lr": 1}, "encoder": {"row_groups": {"coarse": [1]}}})
        assert cfg.seed == 4
        assert cfg.afa.lr == 1.0 and isinstance(cfg.afa.lr, float)
        assert cfg.encoder.row_groups == {"coarse": [1]}
        assert cfg.camera.resolution == 64

    def test_unknown_dotted_key(self):
        with pytest.raises(InvalidArgumentError, match="stage1.iteratons"):
            config_from_dict({"stage1": {"iteratons": 3}})

    @pytest.mark.parametrize("data", [
        {"seed": "3"},
        {"seed": True},
        {"stage1": {"use_latent_disc": 1}},
        {"eval": {"yaws": 30.0}},
        {"camera": 5},
    ])
    def test_wrong_types(self, data):
        with pytest.raises(InvalidArgumentError):
            config_from_dict(data)

    def test_json_round_trip(self):
        cfg = config_from_dict({"seed": 9, "generator": {"tap_layer": 1}})
        assert config_from_dict(json.loads(config_to_json(cfg))) == cfg


class TestLoadConfig:
    def test_defaults_without_file(self):
        assert load_config() == TriInvertConfig()

    def test_file_and_seed_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 2, "render": {"samples_per_ray": 16}}))
        cfg = load_config(str(path), seed=11)
        assert cfg.seed == 11 and cfg.render.samples_per_ray == 16

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            load_config(str(tmp_path / "missing.json"))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{seed: 1")
        with pytest.raises(InvalidArgumentError):
            load_config(str(path))

    def test_non_object_document(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(InvalidArgumentError):
            load_config(str(path))


class TestEnvironment:
    def test_outputs_root(self, monkeypatch):
        monkeypatch.setenv("TRIINVERT_OUTPUTS", "/tmp/elsewhere")
        assert outputs_root() == "/tmp/elsewhere"
        monkeypatch.delenv("TRIINVERT_OUTPUTS")
        assert outputs_root() == "outputs"

    def test_device_override(self, monkeypatch):
        monkeypatch.setenv("TRIINVERT_DEVICE", "CPU")
        assert select_device() == torch.device("cpu")
