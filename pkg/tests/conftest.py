import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "py_modules"))

from config import config_from_dict  # noqa: E402

# R=16 -> 6 w⁺ rows, tap layer 2 at 8×8; images 32×32 (encoder needs multiples of 16)
SMALL = {
    "seed": 7,
    "camera": {"resolution": 32},
    "render": {"samples_per_ray": 8},
    "generator": {"z_dim": 16, "w_dim": 16, "mapping_layers": 2, "channels": 16, "plane_channels": 4,
                  "plane_resolution": 16, "decoder_hidden": 16, "w_avg_samples": 64},
    "dataset": {"num_scenes": 3, "eval_scenes": 1},
    "generator_training": {"iterations": 2, "min_iterations": 1, "batch_size": 2, "log_every": 1,
                           "checkpoint_every": 2},
    "encoder": {"channels": [8, 8, 8, 8], "window_size": 4},
    "stage1": {"iterations": 2, "batch_size": 2, "log_every": 1, "checkpoint_every": 2,
               "stage_thresholds": {"coarse": 0, "mid": 1, "fine": 2}},
    "depth_prior": {"samples": 4, "batch_size": 4},
    "afa": {"iterations": 2, "batch_size": 2, "log_every": 1, "checkpoint_every": 2},
    "editing": {"samples": 40, "quantile": 0.25, "epochs": 50},
    "critic": {"channels": [4, 4, 4, 4]},
    "eval": {"generator_samples": 2},
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the end-to-end pipeline tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_config():
    return config_from_dict(SMALL)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """Artifact root with progress snapshots and the job registry pointed inside it."""
    import job_registry
    import progress

    root = tmp_path / "outputs"
    root.mkdir()
    monkeypatch.setattr(progress, "BASE_DIR", str(root / "progress"))
    monkeypatch.setattr(job_registry, "REG_PATH", str(root / "jobs.json"))
    return root


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    from synthetic_data import make_dataset

    root = tmp_path_factory.mktemp("data")
    make_dataset(str(root), config_from_dict(SMALL))
    return str(root)


@pytest.fixture
def frozen_generator(small_config):
    """Untrained generator; its density bias keeps every render mostly transparent."""
    import torch
    from triplane_generator import TriplaneGenerator

    torch.manual_seed(11)
    return TriplaneGenerator(small_config.generator).eval().requires_grad_(False)
