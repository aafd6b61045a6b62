"""Encoder training against the canonical latent space (first stage).

Losses: non-saturating latent adversarial loss with R1 on real canonical codes,
a background-depth regularizer on the canonical front-view render, image
reconstruction through the feature critic, and a w⁺ spread penalty.
"""
import csv
import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call
from torch.utils.data import DataLoader
from tqdm import tqdm

from camera_geometry import canonical_pose, intrinsics_from_config, orbit_pose, parse_pose_label_lenient
from checkpoints import save_model_checkpoint
from errors import DependencyError, InvalidArgumentError, NoBackgroundError
from feature_critic import RandomConvCritic, build_critic
from geometry_encoder import GeometryEncoder, StageSchedule, wplus_delta_norm
from progress import ProgressReporter
from synthetic_data import MultiViewDataset, read_dataset_meta, split_scenes
from utils import cycle, seed_everything

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("iter", "rec_l2", "perc", "id", "adv_e", "adv_d", "bg", "wreg")


class LatentDiscriminator(nn.Module):
    def __init__(self, w_dim: int, hidden: int = 256, layers: int = 3):
        super().__init__()
        blocks, dim = [], w_dim
        for _ in range(layers):
            blocks += [nn.Linear(dim, hidden), nn.LeakyReLU(0.2)]
            dim = hidden
        blocks.append(nn.Linear(dim, 1))
        self.net = nn.Sequential(*blocks)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        return self.net(w).squeeze(-1)


@dataclass
class DepthPrior:
    d_avg: float
    sample_count: int
    tau: float
    background_pixels: int = 0

    def save(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, sort_keys=True, indent=1)
        return path

    @classmethod
    def load(cls, path: str) -> "DepthPrior":
        if not os.path.exists(path):
            raise DependencyError(f"missing depth prior: {path} (run fit-depth-prior first)")
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))


# ------------------------------------------------------------ canonical codes

def canonical_latents(n: int, z_dim: int, seed: int) -> torch.Tensor:
    if n < 1:
        raise InvalidArgumentError(f"sample count must be >= 1, got {n}")
    return torch.randn(n, z_dim, generator=torch.Generator().manual_seed(seed))


@torch.no_grad()
def sample_canonical_w(generator, n: int, seed: int, camera_cfg, chunk: int = 1024) -> torch.Tensor:
    """n codes w = mapping(z, canonical label), z ~ N(0, I) from `seed`."""
    z = canonical_latents(n, generator.cfg.z_dim, seed)
    device = generator.w_avg.device
    label = generator.canonical_label(camera_cfg).to(device)
    return torch.cat([generator.map_latent(part.to(device), label) for part in z.split(chunk)])


@torch.no_grad()
def compute_w_avg(generator, n: int, seed: int, camera_cfg) -> torch.Tensor:
    w = sample_canonical_w(generator, n, seed, camera_cfg)
    return w.double().mean(dim=0).to(torch.float32)


# ---------------------------------------------------------------- adversarial

def _require_batch(x: torch.Tensor, what: str) -> torch.Tensor:
    if x.numel() == 0 or x.shape[0] == 0:
        raise InvalidArgumentError(f"{what} batch is empty")
    return x.reshape(-1, x.shape[-1])


def disc_loss(real: torch.Tensor, fake: torch.Tensor, disc: nn.Module, r1_gamma: float,
              r1_squared: bool = True) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """-E[log σ(D(w_c))] - E[log(1-σ(D(w_i)))] + (γ/2)·E[‖∇D(w_c)‖²]; fake rows are taken independently."""
    real = _require_batch(real, "real").detach().requires_grad_(True)
    fake = _require_batch(fake, "fake").detach()
    real_logits = disc(real)
    fake_logits = disc(fake)
    adv = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    if r1_gamma > 0:
        (grad,) = torch.autograd.grad(real_logits.sum(), real, create_graph=True)
        norm_sq = grad.square().sum(dim=1)
        penalty = norm_sq if r1_squared else norm_sq.clamp_min(1e-20).sqrt()
        r1 = 0.5 * r1_gamma * penalty.mean()
    else:
        r1 = adv.new_zeros(())
    return adv + r1, {"adv_d": adv.detach(), "r1": r1.detach()}


def enc_adv_loss(fake: torch.Tensor, disc: nn.Module) -> torch.Tensor:
    """-E[log σ(D(w_i))] with the discriminator's parameters held constant."""
    fake = _require_batch(fake, "fake")
    frozen = {name: p.detach() for name, p in disc.named_parameters()}
    logits = functional_call(disc, frozen, (fake,))
    return F.softplus(-logits).mean()


# --------------------------------------------------------------- depth prior

def depth_prior_from_renders(depths: Sequence[torch.Tensor], opacities: Sequence[torch.Tensor],
                             tau: float, sample_count: int) -> DepthPrior:
    """Average depth over pixels with opacity < tau, accumulated in float64 in the given order."""
    total = torch.zeros((), dtype=torch.float64)
    count = 0
    for depth, opacity in zip(depths, opacities):
        mask = opacity < tau
        total = total + depth.double()[mask].sum().cpu()
        count += int(mask.sum())
    if count == 0:
        raise NoBackgroundError(f"no background pixels below opacity {tau} in {sample_count} canonical renders")
    return DepthPrior(float(total / count), sample_count, float(tau), count)


@torch.no_grad()
def estimate_depth_prior(generator, n: int, tau: float, seed: int, cfg, batch_size: int = 16) -> DepthPrior:
    """Render n canonical-pose samples (front view) and average their background depth."""
    if n < 1:
        raise InvalidArgumentError(f"depth prior needs at least one sample, got {n}")
    w = sample_canonical_w(generator, n, seed, cfg.camera)
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    pose = canonical_pose(cfg.camera.distance)
    depths, opacities = [], []
    for chunk in tqdm(w.split(batch_size), desc="depth-prior", leave=False):
        _, planes = generator.synthesize_from_w(chunk)
        out = generator.render(planes, pose, intr, res, cfg.render)
        depths.append(out.depth)
        opacities.append(out.opacity)
    prior = depth_prior_from_renders(depths, opacities, tau, n)
    logger.info("[canonical_training] d_avg %.4f from %d background pixels", prior.d_avg, prior.background_pixels)
    return prior


def background_loss(depth: torch.Tensor, mask: torch.Tensor, d_avg: float) -> torch.Tensor:
    """RMS of (depth - d_avg) over mask=1 pixels; 0 for an empty mask."""
    if depth.shape != mask.shape:
        raise InvalidArgumentError(f"depth {tuple(depth.shape)} and mask {tuple(mask.shape)} differ")
    m = mask.to(depth.dtype)
    count = m.sum()
    mean_sq = ((depth - d_avg).square() * m).sum() / count.clamp_min(1.0)
    return torch.where(mean_sq > 0, mean_sq.clamp_min(1e-30).sqrt(), torch.zeros_like(mean_sq))


# ------------------------------------------------------------ reconstruction

def reconstruction_loss(rec: torch.Tensor, target: torch.Tensor, critic: RandomConvCritic,
                        weights) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    if rec.shape != target.shape:
        raise InvalidArgumentError(f"reconstruction {tuple(rec.shape)} and target {tuple(target.shape)} differ")
    parts = {
        "rec_l2": F.mse_loss(rec, target),
        "perc": critic.perceptual(rec, target),
        "id": critic.identity(rec, target),
    }
    total = weights.lambda1 * parts["rec_l2"] + weights.lambda2 * parts["perc"] + weights.lambda3 * parts["id"]
    return total, parts


def stage1_total_loss(rec_total: torch.Tensor, adv_e: torch.Tensor, bg: torch.Tensor, wreg: torch.Tensor,
                      weights) -> torch.Tensor:
    return rec_total + weights.lambda4 * adv_e + weights.lambda5 * bg + weights.lambda6 * wreg


# ------------------------------------------------------------ shared batching

def generated_views(generator, n: int, cfg, rng: torch.Generator, device):
    """n generator samples rendered at random dataset yaws: (images, poses, w⁺)."""
    z = torch.randn(n, generator.cfg.z_dim, generator=rng).to(device)
    label = generator.canonical_label(cfg.camera).to(device)
    yaws = cfg.dataset.scene.yaws
    picks = torch.randint(len(yaws), (n,), generator=rng).tolist()
    poses = [orbit_pose(yaws[i], cfg.dataset.scene.pitch, cfg.camera.distance) for i in picks]
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    with torch.no_grad():
        w = generator.map_latent(z, label)
        wp = w.unsqueeze(1).repeat(1, generator.num_ws, 1)
        _, planes = generator.generator_forward(wp)
        out = generator.render(planes, poses, intr, res, cfg.render)
    return out.image, poses, wp


def mixed_batch(batch: Dict, generator, cfg, fraction: float, rng: torch.Generator, device):
    """Dataset batch with the trailing round(fraction·B) items replaced by generator samples."""
    images = batch["image"].to(device)
    poses = [parse_pose_label_lenient(label)[0] for label in batch["label"]]
    n_gen = int(round(fraction * images.shape[0]))
    if n_gen > 0:
        gen_images, gen_poses, _ = generated_views(generator, n_gen, cfg, rng, device)
        images = torch.cat([images[: images.shape[0] - n_gen], gen_images])
        poses = poses[: len(poses) - n_gen] + gen_poses
    return images, poses


def training_loader(data_root: str, batch_size: int, num_workers: int, seed: int) -> DataLoader:
    meta = read_dataset_meta(data_root)
    train_scenes, _ = split_scenes(meta)
    dataset = MultiViewDataset(data_root, train_scenes)
    return DataLoader(dataset, batch_size=batch_size, shuffle=True, drop_last=len(dataset) >= batch_size,
                      num_workers=num_workers, generator=torch.Generator().manual_seed(seed))


class LossLog:
    """CSV loss curve, header row first, one row per logging interval."""

    def __init__(self, path: str, columns: Sequence[str]):
        self.path, self.columns = path, list(columns)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow(self.columns)

    def append(self, row: Dict) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow([_fmt(row.get(c, 0.0)) for c in self.columns])


def _fmt(value) -> str:
    if isinstance(value, int):
        return str(value)
    return f"{float(value):.6g}"


# --------------------------------------------------------------------- loop

def train_stage1(cfg, data_root: str, generator, prior: Optional[DepthPrior], out_path: str,
                 log_path: str, task_id: Optional[str] = None,
                 device: torch.device = torch.device("cpu")) -> Dict:
    """Alternate discriminator and encoder steps; the generator stays frozen."""
    s1, weights = cfg.stage1, cfg.losses
    if s1.use_background_loss and prior is None:
        raise DependencyError("background loss enabled but no depth prior given (run fit-depth-prior)")
    rng = seed_everything(cfg.seed)
    schedule = StageSchedule(s1.stage_thresholds)
    encoder = GeometryEncoder(cfg.encoder, generator.num_ws, generator.w_dim, cfg.camera.resolution).to(device)
    encoder.w_avg.copy_(generator.w_avg)
    disc = LatentDiscriminator(generator.w_dim).to(device)
    critic = build_critic(cfg.critic).to(device)
    opt_e = torch.optim.Adam(encoder.parameters(), lr=s1.lr_encoder)
    opt_d = torch.optim.Adam(disc.parameters(), lr=s1.lr_disc, betas=(0.0, 0.99))

    batches = cycle(training_loader(data_root, s1.batch_size, s1.num_workers, cfg.seed))
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    front = canonical_pose(cfg.camera.distance)
    log = LossLog(log_path, LOSS_COLUMNS)
    reporter = ProgressReporter(task_id, "train-encoder", s1.iterations)
    zero = torch.zeros((), device=device)

    it, canceled, stage = 0, False, schedule.active_stage(0)
    bar = tqdm(range(1, s1.iterations + 1), desc="train-encoder", leave=False)
    for it in bar:
        stage = schedule.active_stage(it - 1)
        images, poses = mixed_batch(next(batches), generator, cfg, s1.generated_fraction, rng, device)

        adv_d = zero
        if s1.use_latent_disc:
            real = sample_canonical_w(generator, images.shape[0] * generator.num_ws,
                                      cfg.seed * 1_000_003 + it, cfg.camera)
            with torch.no_grad():
                fake = encoder(images, stage)
            loss_d, parts_d = disc_loss(real, fake, disc, weights.r1_gamma, weights.r1_squared)
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()
            adv_d = parts_d["adv_d"]

        wp = encoder(images, stage)
        _, planes = generator.generator_forward(wp)
        out = generator.render(planes, poses, intr, res, cfg.render, generator=rng)
        rec_total, parts = reconstruction_loss(out.image, images, critic, weights)
        adv_e = enc_adv_loss(wp, disc) if s1.use_latent_disc else zero
        bg = zero
        if s1.use_background_loss:
            front_out = generator.render(planes, front, intr, res, cfg.render, generator=rng)
            mask = front_out.opacity.detach() < prior.tau
            bg = background_loss(front_out.depth, mask, prior.d_avg)
        wreg = wplus_delta_norm(wp)
        loss = stage1_total_loss(rec_total, adv_e, bg, wreg, weights)
        opt_e.zero_grad(set_to_none=True)
        loss.backward()
        opt_e.step()

        if it % s1.log_every == 0 or it == s1.iterations:
            row = {"iter": it, **{k: v.item() for k, v in parts.items()},
                   "adv_e": adv_e.item(), "adv_d": adv_d.item(), "bg": bg.item(), "wreg": wreg.item()}
            log.append(row)
            bar.set_postfix(stage=stage, rec=f"{row['rec_l2']:.4f}")
            reporter.update(it, {k: v for k, v in row.items() if k != "iter"})
        if it % s1.checkpoint_every == 0:
            _save_stage1(out_path, cfg, encoder, disc, it, stage, False)
        if reporter.canceled():
            canceled = True
            break

    _save_stage1(out_path, cfg, encoder, disc, it, stage, canceled)
    reporter.finish(it, canceled)
    return {"iterations": it, "active_stage": stage, "canceled": canceled, "loss_log": log_path}


def _save_stage1(path, cfg, encoder, disc, it, stage, canceled) -> None:
    save_model_checkpoint(path, cfg, {"encoder": encoder, "discriminator": disc},
                          {"stage1": {"iterations": it, "active_stage": stage, "canceled": canceled}})


