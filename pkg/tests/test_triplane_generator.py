import pytest
import torch

from camera_geometry import Intrinsics, orbit_pose, pose_label
from errors import InvalidArgumentError
from triplane_generator import RenderingDecoder, TriplaneGenerator, modulated_conv2d


@pytest.fixture
def generator(small_config):
    torch.manual_seed(0)
    return TriplaneGenerator(small_config.generator).eval()


def _wplus(generator, batch=2, seed=1):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(batch, generator.num_ws, generator.w_dim, generator=gen)


class TestMapLatent:
    def test_deterministic(self, generator, small_config):
        z = torch.randn(3, small_config.generator.z_dim)
        label = generator.canonical_label(small_config.camera)
        assert torch.equal(generator.map_latent(z, label), generator.map_latent(z, label))

    def test_pose_condition_changes_w(self, generator, small_config):
        z = torch.randn(1, small_config.generator.z_dim)
        cam = small_config.camera
        side = pose_label(orbit_pose(30.0, 0.0, cam.distance), Intrinsics(cam.fx, cam.fy, cam.cx, cam.cy))
        w_front = generator.map_latent(z, generator.canonical_label(cam))
        w_side = generator.map_latent(z, side.float())
        assert (w_front - w_side).norm() > 0

    def test_unbatched(self, generator, small_config):
        w = generator.map_latent(torch.randn(small_config.generator.z_dim), generator.canonical_label(small_config.camera))
        assert w.shape == (small_config.generator.w_dim,)

    def test_wrong_lengths(self, generator, small_config):
        with pytest.raises(InvalidArgumentError):
            generator.map_latent(torch.randn(2, small_config.generator.z_dim + 1),
                                 generator.canonical_label(small_config.camera))
        with pytest.raises(InvalidArgumentError):
            generator.map_latent(torch.randn(2, small_config.generator.z_dim), torch.zeros(2, 24))


class TestGeneratorForward:
    def test_shapes(self, generator, small_config):
        g = small_config.generator
        feats, planes = generator.generator_forward(_wplus(generator))
        assert planes.shape == (2, 3, g.plane_channels, g.plane_resolution, g.plane_resolution)
        assert feats.tapped.shape == (2, g.channels, g.tap_resolution, g.tap_resolution)
        assert generator.tapped_shape() == (g.channels, g.tap_resolution, g.tap_resolution)

    def test_bit_identical_repeats(self, generator):
        wp = _wplus(generator)
        a = generator.generator_forward(wp)[1]
        b = generator.generator_forward(wp)[1]
        assert torch.equal(a, b)

    def test_duplicate_rows_equal_single_w(self, generator):
        w = torch.randn(2, generator.w_dim)
        wp = w.unsqueeze(1).repeat(1, generator.num_ws, 1)
        torch.testing.assert_close(generator.generator_forward(wp)[1], generator.synthesize_from_w(w)[1],
                                   rtol=0, atol=0)

    def test_keeps_one_activation_per_layer(self, generator):
        feats, _ = generator.generator_forward(_wplus(generator), keep_activations=True)
        assert len(feats.activations) == generator.num_ws
        assert torch.equal(feats.activations[generator.tap_index], feats.tapped)

    def test_rejects_wrong_row_count(self, generator):
        with pytest.raises(InvalidArgumentError):
            generator.generator_forward(torch.zeros(1, generator.num_ws - 1, generator.w_dim))


class TestResumeForward:
    def test_unmodified_features_reproduce_planes(self, generator):
        wp = _wplus(generator)
        feats, planes = generator.generator_forward(wp)
        assert torch.equal(generator.resume_forward(feats.tapped, wp), planes)

    def test_perturbation_matches_directional_derivative(self, small_config):
        torch.manual_seed(3)
        generator = TriplaneGenerator(small_config.generator).double().eval()
        wp = _wplus(generator, 1).double()
        fstar = generator.generator_forward(wp)[0].tapped.detach()
        gen = torch.Generator().manual_seed(4)
        direction = torch.randn(fstar.shape, generator=gen, dtype=torch.float64)
        probe = torch.randn((1, 3) + tuple(generator.generator_forward(wp)[1].shape[2:]), generator=gen,
                            dtype=torch.float64)

        def objective(f):
            return (generator.resume_forward(f, wp) * probe).sum()

        assert not torch.equal(generator.resume_forward(fstar + 1e-3 * direction, wp),
                               generator.resume_forward(fstar, wp))
        f = fstar.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(objective(f), f)
        analytic = (grad * direction).sum().item()
        eps = 1e-6
        numeric = (objective(fstar + eps * direction) - objective(fstar - eps * direction)).item() / (2 * eps)
        assert numeric == pytest.approx(analytic, rel=1e-3)

    def test_zero_features_stay_finite(self, generator):
        wp = _wplus(generator)
        planes = generator.resume_forward(torch.zeros((2,) + generator.tapped_shape()), wp)
        assert torch.isfinite(planes).all()

    def test_shape_mismatch(self, generator):
        with pytest.raises(InvalidArgumentError):
            generator.resume_forward(torch.zeros(2, 1, 2, 2), _wplus(generator))


class TestRenderingDecoder:
    def test_output_ranges(self):
        decoder = RenderingDecoder(4, 8)
        rgb, sigma = decoder(torch.randn(100, 4) * 10)
        assert rgb.shape == (100, 3) and sigma.shape == (100,)
        assert (rgb >= 0).all() and (rgb <= 1).all() and (sigma >= 0).all()

    def test_render_shapes(self, generator, small_config):
        cam = small_config.camera
        _, planes = generator.generator_forward(_wplus(generator))
        out = generator.render(planes, orbit_pose(30.0, 0.0, cam.distance), Intrinsics(cam.fx, cam.fy, cam.cx, cam.cy),
                               (8, 8), small_config.render)
        assert out.image.shape == (2, 3, 8, 8)
        assert out.depth.shape == out.opacity.shape == (2, 8, 8)


class TestModulatedConv:
    def test_matches_per_sample_conv(self):
        gen = torch.Generator().manual_seed(0)
        x = torch.randn(2, 3, 5, 5, generator=gen, dtype=torch.float64)
        weight = torch.randn(4, 3, 3, 3, generator=gen, dtype=torch.float64)
        styles = torch.randn(2, 3, generator=gen, dtype=torch.float64)
        out = modulated_conv2d(x, weight, styles, demodulate=False, padding=1)
        for b in range(2):
            ref = torch.nn.functional.conv2d(x[b:b + 1], weight * styles[b].reshape(1, 3, 1, 1), padding=1)
            torch.testing.assert_close(out[b:b + 1], ref)
