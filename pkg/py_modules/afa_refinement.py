"""Adaptive feature alignment and its (second-stage) training loop.

Residual-image features are aligned to the tapped generator feature map F by
cross-attention (queries from F, keys/values from the residual features) and
turned into FiLM scale/shift maps: F* = γ ⊙ F + β. Both FiLM heads start at the
identity (γ = 1, β = 0).
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn
from einops import rearrange
from tqdm import tqdm

from attention import CrossAttention
from camera_geometry import canonical_pose, intrinsics_from_config
from canonical_training import DepthPrior, LossLog, background_loss, mixed_batch, reconstruction_loss, training_loader
from checkpoints import save_model_checkpoint
from errors import InvalidArgumentError
from feature_critic import build_critic
from occlusion_mix import mix_triplane, tri_masks_from_render
from progress import ProgressReporter
from utils import cycle, seed_everything

logger = logging.getLogger(__name__)

STAGE2_COLUMNS = ("iter", "rec_l2", "perc", "id", "bg", "delta_f")


@dataclass
class FilmParams:
    gamma: torch.Tensor
    beta: torch.Tensor


@dataclass
class AfaOutput:
    fstar: torch.Tensor
    delta: torch.Tensor     # F* - F
    film: FilmParams


def apply_film(features: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    if not (features.shape == gamma.shape == beta.shape):
        raise InvalidArgumentError(
            f"FiLM shapes disagree: F {tuple(features.shape)}, γ {tuple(gamma.shape)}, β {tuple(beta.shape)}")
    return gamma * features + beta


class AdaptiveFeatureAlignment(nn.Module):
    def __init__(self, feature_channels: int, feature_res: int, image_res: int, heads: int = 1):
        super().__init__()
        steps = math.log2(image_res / feature_res)
        if steps < 0 or steps != int(steps):
            raise InvalidArgumentError(
                f"image resolution {image_res} must be a power-of-two multiple of feature resolution {feature_res}")
        self.channels, self.feature_res, self.image_res = feature_channels, feature_res, image_res
        layers, in_ch = [nn.Conv2d(3, feature_channels, 3, padding=1), nn.LeakyReLU(0.2)], feature_channels
        for _ in range(int(steps)):
            layers += [nn.Conv2d(in_ch, feature_channels, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(feature_channels, feature_channels, 3, padding=1))
        self.residual_cnn = nn.Sequential(*layers)

        tokens = feature_res * feature_res
        self.pos_q = nn.Parameter(torch.randn(1, tokens, feature_channels) * 0.02)
        self.pos_k = nn.Parameter(torch.randn(1, tokens, feature_channels) * 0.02)
        self.attn = CrossAttention(feature_channels, feature_channels, feature_channels, heads)

        self.conv_gamma = nn.Conv2d(feature_channels, feature_channels, 3, padding=1)
        self.conv_beta = nn.Conv2d(feature_channels, feature_channels, 3, padding=1)
        for conv, bias in ((self.conv_gamma, 1.0), (self.conv_beta, 0.0)):
            nn.init.zeros_(conv.weight)
            nn.init.constant_(conv.bias, bias)

    def _check_features(self, features: torch.Tensor, what: str) -> None:
        expected = (self.channels, self.feature_res, self.feature_res)
        if features.ndim != 4 or tuple(features.shape[1:]) != expected:
            raise InvalidArgumentError(f"{what} must be B×{expected[0]}×{expected[1]}×{expected[2]}, "
                                       f"got {tuple(features.shape)}")

    def residual_features(self, delta: torch.Tensor) -> torch.Tensor:
        if delta.ndim != 4 or tuple(delta.shape[1:]) != (3, self.image_res, self.image_res):
            raise InvalidArgumentError(
                f"residual image must be B×3×{self.image_res}×{self.image_res}, got {tuple(delta.shape)}")
        return self.residual_cnn(delta)

    def align(self, features: torch.Tensor, residual: torch.Tensor, return_weights: bool = False):
        """Queries from F, keys/values from F_ΔI.

        pos_q is added to the queries and pos_k to the keys; the values carry no positional term.
        """
        self._check_features(features, "F")
        self._check_features(residual, "F_ΔI")
        f_tok = rearrange(features, "b c h w -> b (h w) c")
        r_tok = rearrange(residual, "b c h w -> b (h w) c")
        out, weights = self.attn(f_tok + self.pos_q, r_tok, return_weights=True, key_context=r_tok + self.pos_k)
        aligned = rearrange(out, "b (h w) c -> b c h w", h=self.feature_res)
        return (aligned, weights) if return_weights else aligned

    def film_modulate(self, features: torch.Tensor, aligned: torch.Tensor):
        if features.shape != aligned.shape:
            raise InvalidArgumentError(f"F {tuple(features.shape)} and F_align {tuple(aligned.shape)} differ")
        film = FilmParams(self.conv_gamma(aligned), self.conv_beta(aligned))
        return apply_film(features, film.gamma, film.beta), film

    def forward(self, image: torch.Tensor, image_wplus: torch.Tensor, features: torch.Tensor) -> AfaOutput:
        aligned = self.align(features, self.residual_features(image - image_wplus))
        fstar, film = self.film_modulate(features, aligned)
        return AfaOutput(fstar, fstar - features, film)


def build_afa(cfg) -> AdaptiveFeatureAlignment:
    gen = cfg.generator
    return AdaptiveFeatureAlignment(gen.channels, gen.tap_resolution, cfg.camera.resolution, cfg.afa.heads)


def feature_delta_penalty(delta: torch.Tensor) -> torch.Tensor:
    """Batch mean of the per-sample squared L2 norm of ΔF."""
    return delta.flatten(1).square().sum(dim=1).mean()


def refine(generator, afa: Optional[AdaptiveFeatureAlignment], images: torch.Tensor, wp: torch.Tensor,
           poses, cfg, use_mix: bool = True, dilation: int = 1, tau: float = 0.5):
    """w⁺ -> refined tri-plane. Returns dict with planes_wplus, render_wplus, fstar, delta, tri_mask, planes."""
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    feats, planes_w = generator.generator_forward(wp)
    with torch.no_grad():
        render_w = generator.render(planes_w, poses, intr, res, cfg.render)
    result = {"planes_wplus": planes_w, "render_wplus": render_w, "fstar": feats.tapped,
              "delta": torch.zeros_like(feats.tapped), "tri_mask": None, "planes": planes_w}
    if afa is None:
        return result
    out = afa(images, render_w.image, feats.tapped)
    planes_f = generator.resume_forward(out.fstar, wp)
    result.update(fstar=out.fstar, delta=out.delta, planes=planes_f)
    if use_mix:
        mask = tri_masks_from_render(render_w.depth, render_w.opacity, poses, intr,
                                     planes_w.shape[-1], dilation, tau)
        result.update(tri_mask=mask, planes=mix_triplane(planes_f, planes_w, mask))
    return result


def train_stage2(cfg, data_root: str, generator, encoder, prior: Optional[DepthPrior], out_path: str,
                 log_path: str, task_id: Optional[str] = None,
                 device: torch.device = torch.device("cpu")) -> Dict:
    """Optimize the alignment module only; encoder and generator stay frozen."""
    s2, weights = cfg.afa, cfg.losses
    use_bg = s2.use_background_loss and prior is not None
    if s2.use_background_loss and prior is None:
        logger.warning("[afa_refinement] no depth prior given, background loss disabled")
    rng = seed_everything(cfg.seed)
    encoder.eval().requires_grad_(False)
    afa = build_afa(cfg).to(device)
    critic = build_critic(cfg.critic).to(device)
    opt = torch.optim.Adam(afa.parameters(), lr=s2.lr)

    batches = cycle(training_loader(data_root, s2.batch_size, s2.num_workers, cfg.seed))
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    front = canonical_pose(cfg.camera.distance)
    log = LossLog(log_path, STAGE2_COLUMNS)
    reporter = ProgressReporter(task_id, "train-afa", s2.iterations)
    zero = torch.zeros((), device=device)

    it, canceled = 0, False
    bar = tqdm(range(1, s2.iterations + 1), desc="train-afa", leave=False)
    for it in bar:
        images, poses = mixed_batch(next(batches), generator, cfg, s2.generated_fraction, rng, device)
        with torch.no_grad():
            wp = encoder(images)
        result = refine(generator, afa, images, wp, poses, cfg, s2.use_mix, s2.dilation, s2.tau)
        out = generator.render(result["planes"], poses, intr, res, cfg.render, generator=rng)
        rec_total, parts = reconstruction_loss(out.image, images, critic, weights)
        bg = zero
        if use_bg:
            front_out = generator.render(result["planes"], front, intr, res, cfg.render, generator=rng)
            bg = background_loss(front_out.depth, front_out.opacity.detach() < prior.tau, prior.d_avg)
        delta_f = feature_delta_penalty(result["delta"])
        loss = rec_total + weights.lambda5 * bg + weights.lambda7 * delta_f
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if it % s2.log_every == 0 or it == s2.iterations:
            row = {"iter": it, **{k: v.item() for k, v in parts.items()}, "bg": bg.item(), "delta_f": delta_f.item()}
            log.append(row)
            bar.set_postfix(rec=f"{row['rec_l2']:.4f}")
            reporter.update(it, {k: v for k, v in row.items() if k != "iter"})
        if it % s2.checkpoint_every == 0:
            _save_stage2(out_path, cfg, afa, it, False)
        if reporter.canceled():
            canceled = True
            break

    _save_stage2(out_path, cfg, afa, it, canceled)
    reporter.finish(it, canceled)
    return {"iterations": it, "canceled": canceled, "loss_log": log_path}


def _save_stage2(path, cfg, afa, it, canceled) -> None:
    save_model_checkpoint(path, cfg, {"afa": afa}, {"stage2": {"iterations": it, "canceled": canceled}})
