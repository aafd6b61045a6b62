import pytest
import torch

from canonical_training import compute_w_avg
from checkpoints import load_generator, read_entries, stored_meta
from generator_training import heldout_views, reconstruction_terms, train_toy_generator
from volume_rendering import RenderOutput


def test_heldout_views_by_yaw():
    assert heldout_views({"yaws": [-60.0, -30.0, 0.0, 30.0, 60.0]}, [30.0]) == [3]
    assert heldout_views({"yaws": [0.0, 15.0]}, [30.0]) == []


def test_reconstruction_terms_vanish_on_exact_render():
    image = torch.rand(2, 3, 4, 4)
    depth = torch.zeros(2, 4, 4)
    depth[:, 1:3, 1:3] = 2.5
    out = RenderOutput(image.clone(), depth.clone(), (depth > 0).float())
    terms = reconstruction_terms(out, image, depth)
    assert all(v.item() == 0.0 for v in terms.values())


def test_depth_term_ignores_empty_pixels():
    depth = torch.zeros(1, 2, 2)
    depth[0, 0, 0] = 2.0
    out = RenderOutput(torch.zeros(1, 3, 2, 2), torch.full((1, 2, 2), 3.0), torch.zeros(1, 2, 2))
    terms = reconstruction_terms(out, torch.zeros(1, 3, 2, 2), depth)
    assert terms["depth"].item() == pytest.approx(1.0)
    assert terms["opacity"].item() == pytest.approx(0.25)


def test_short_training_run(tmp_path, small_config, dataset_root):
    path = str(tmp_path / "generator.tpck")
    summary = train_toy_generator(small_config, dataset_root, path)
    assert summary["iterations"] == 2 and not summary["canceled"]
    assert summary["heldout_views"] == [3]

    generator, cfg = load_generator(path)
    assert cfg == small_config
    assert not generator.training
    assert not any(p.requires_grad for p in generator.parameters())
    expected = compute_w_avg(generator, small_config.generator.w_avg_samples, small_config.seed, small_config.camera)
    torch.testing.assert_close(generator.w_avg, expected)
    assert stored_meta(read_entries(path, "generator"), "generator_training")["iterations"] == 2
