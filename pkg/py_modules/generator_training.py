"""Toy generator pre-training by multi-view reconstruction.

Every training scene owns a learned latent z (GLO-style); all scenes share the
mapping network, synthesis network and rendering decoder. z is mapped with the
canonical pose label, so the trained generator's W lives in the canonical
space the encoder later targets.
"""
import logging
from typing import Dict, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm

from camera_geometry import intrinsics_from_config, parse_pose_label_lenient
from canonical_training import compute_w_avg
from checkpoints import save_model_checkpoint
from metrics import psnr
from progress import ProgressReporter
from synthetic_data import MultiViewDataset, read_dataset_meta, split_scenes
from triplane_generator import TriplaneGenerator
from utils import cycle, seed_everything

logger = logging.getLogger(__name__)


def poses_from_labels(labels: torch.Tensor) -> List:
    return [parse_pose_label_lenient(label)[0] for label in labels]


def heldout_views(meta: Dict, heldout_yaws) -> List[int]:
    return [k for k, yaw in enumerate(meta["yaws"]) if any(abs(yaw - h) < 1e-6 for h in heldout_yaws)]


def reconstruction_terms(out, image, depth) -> Dict[str, torch.Tensor]:
    """Image MSE, depth MSE over surface pixels, opacity MSE against the surface mask."""
    hit = (depth > 0).to(out.opacity.dtype)
    img = F.mse_loss(out.image, image)
    dep = ((out.depth - depth).square() * hit).sum() / hit.sum().clamp_min(1.0)
    opa = F.mse_loss(out.opacity, hit)
    return {"img": img, "depth": dep, "opacity": opa}


@torch.no_grad()
def heldout_psnr(generator: TriplaneGenerator, latents: nn.Embedding, dataset: MultiViewDataset,
                 cfg, device, limit: int = 8) -> float:
    """Mean PSNR over held-out views of the first `limit` training scenes (eval-mode render)."""
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    label_c = generator.canonical_label(cfg.camera).to(device)
    scores = []
    for idx in range(min(len(dataset), limit * max(1, len(dataset.views)))):
        item = dataset[idx]
        if item["scene_slot"] >= limit:
            continue
        z = latents.weight[item["scene_slot"]].unsqueeze(0)
        _, planes = generator.synthesize_from_w(generator.map_latent(z, label_c))
        pose = parse_pose_label_lenient(item["label"])[0]
        out = generator.render(planes, pose, intr, res, cfg.render)
        scores.append(psnr(out.image[0].cpu(), item["image"]))
    return float(sum(scores) / len(scores)) if scores else 0.0


def train_toy_generator(cfg, data_root: str, out_path: str, task_id: Optional[str] = None,
                        device: torch.device = torch.device("cpu")) -> Dict:
    """Fit the generator on the training scenes; always writes a checkpoint.

    Returns a summary with the final held-out PSNR and whether the target was met.
    """
    tcfg = cfg.generator_training
    rng = seed_everything(cfg.seed)
    meta = read_dataset_meta(data_root)
    train_scenes, _ = split_scenes(meta)
    held = heldout_views(meta, tcfg.heldout_yaws)
    train_views = [k for k in range(len(meta["yaws"])) if k not in held] or list(range(len(meta["yaws"])))
    train_set = MultiViewDataset(data_root, train_scenes, train_views)
    held_set = MultiViewDataset(data_root, train_scenes, held) if held else None

    generator = TriplaneGenerator(cfg.generator).to(device)
    latents = nn.Embedding(len(train_scenes), cfg.generator.z_dim).to(device)
    nn.init.normal_(latents.weight)
    opt = torch.optim.Adam([
        {"params": generator.parameters(), "lr": tcfg.lr},
        {"params": latents.parameters(), "lr": tcfg.lr_latent},
    ], betas=(0.0, 0.99))

    loader = DataLoader(train_set, batch_size=tcfg.batch_size, shuffle=True, drop_last=False,
                        num_workers=tcfg.num_workers, generator=torch.Generator().manual_seed(cfg.seed))
    batches = cycle(loader)
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    label_c = generator.canonical_label(cfg.camera).to(device)
    reporter = ProgressReporter(task_id, "train-gen", tcfg.iterations)

    converged, canceled, it = False, False, 0
    bar = tqdm(range(1, tcfg.iterations + 1), desc="train-gen", leave=False)
    for it in bar:
        batch = next(batches)
        slots = batch["scene_slot"].to(device)
        image, depth = batch["image"].to(device), batch["depth"].to(device)
        z = latents(slots)
        _, planes = generator.synthesize_from_w(generator.map_latent(z, label_c))
        out = generator.render(planes, poses_from_labels(batch["label"]), intr, res, cfg.render, generator=rng)
        terms = reconstruction_terms(out, image, depth)
        reg = z.square().mean()
        loss = (terms["img"] + tcfg.depth_weight * terms["depth"]
                + tcfg.opacity_weight * terms["opacity"] + tcfg.latent_reg * reg)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if it % tcfg.log_every == 0 or it == tcfg.iterations:
            losses = {"loss": loss.item(), **{k: v.item() for k, v in terms.items()}}
            bar.set_postfix(loss=f"{losses['loss']:.4f}")
            logger.info("[generator_training] iter %d loss %.5f img %.5f", it, losses["loss"], losses["img"])
            reporter.update(it, losses)
        if it % tcfg.checkpoint_every == 0 or it == tcfg.iterations:
            generator.eval()
            score = heldout_psnr(generator, latents, held_set or train_set, cfg, device)
            generator.train()
            logger.info("[generator_training] iter %d held-out PSNR %.2f dB", it, score)
            if score >= tcfg.target_psnr and it >= tcfg.min_iterations:
                converged = True
                break
        if reporter.canceled():
            canceled = True
            break

    generator.eval()
    generator.w_avg.copy_(compute_w_avg(generator, cfg.generator.w_avg_samples, cfg.seed, cfg.camera).to(device))
    final = heldout_psnr(generator, latents, held_set or train_set, cfg, device)
    if not converged and not canceled:
        logger.warning("[generator_training] target %.1f dB not reached after %d iterations (held-out PSNR %.2f)",
                       tcfg.target_psnr, it, final)
    summary = {"iterations": it, "heldout_psnr": final, "target_psnr": tcfg.target_psnr,
               "converged": converged or final >= tcfg.target_psnr, "canceled": canceled,
               "heldout_views": held}
    save_model_checkpoint(out_path, cfg, {"generator": generator}, {"generator_training": summary})
    reporter.finish(it, canceled, f"held-out PSNR {final:.2f} dB")
    return summary
