"""Attribute directions in W and 3D-consistent edits of inverted scenes.

Directions come from a linear max-margin separator fitted on canonical-pose
samples whose rendered attribute scores fall in the top/bottom quantiles.
Edits shift w⁺ along the direction and carry the feature-space refinement over
through F̂* = F* + F(ŵ⁺) - F(w⁺).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import torch

from camera_geometry import canonical_pose, intrinsics_from_config
from canonical_training import sample_canonical_w
from errors import InvalidArgumentError
from file_formats import json_entry, load_checkpoint, read_json_entry, save_checkpoint
from occlusion_mix import mix_triplane

logger = logging.getLogger(__name__)

ATTRIBUTES = ("size", "hue")
MIN_SAMPLES = 20


@dataclass
class EditDirection:
    direction: torch.Tensor             # d_w, unit norm
    attribute: str = ""
    stats: Dict[str, float] = field(default_factory=dict)


def fit_direction(latents: torch.Tensor, labels: torch.Tensor, l2: float = 1e-3, epochs: int = 500,
                  lr: float = 0.1, attribute: str = "") -> EditDirection:
    """Hinge-loss linear classifier by full-batch subgradient descent; direction = normalized weights.

    Inputs are centered and divided by one global scale, which leaves the
    direction unchanged; starting from zero makes label flips flip the sign exactly.
    """
    x = torch.as_tensor(latents, dtype=torch.float64)
    y = torch.as_tensor(labels).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"latents must be n×d with one label each, got {tuple(x.shape)} / {tuple(y.shape)}")
    if x.shape[0] < MIN_SAMPLES:
        raise InvalidArgumentError(f"need at least {MIN_SAMPLES} samples, got {x.shape[0]}")
    y = torch.where(y.to(torch.float64) > 0, 1.0, -1.0).to(torch.float64)
    if (y > 0).all() or (y < 0).all():
        raise InvalidArgumentError("labels contain a single class")

    xc = x - x.mean(dim=0)
    xs = xc / xc.std().clamp_min(1e-12)
    w = torch.zeros(x.shape[1], dtype=torch.float64)
    b = torch.zeros((), dtype=torch.float64)
    n = float(x.shape[0])
    for _ in range(epochs):
        margins = y * (xs @ w + b)
        active = (margins < 1.0).to(torch.float64) * y
        grad_w = -(active @ xs) / n + l2 * w
        grad_b = -active.sum() / n
        w = w - lr * grad_w
        b = b - lr * grad_b

    norm = w.norm()
    if norm == 0:
        raise InvalidArgumentError("separator collapsed to zero; labels carry no linear signal")
    margins = y * (xs @ w + b) / norm
    stats = {
        "accuracy": float((margins > 0).double().mean()),
        "min_margin": float(margins.min()),
        "mean_margin": float(margins.mean()),
        "positives": int((y > 0).sum()),
        "negatives": int((y < 0).sum()),
    }
    return EditDirection((w / norm).to(torch.float32), attribute, stats)


def select_extremes(scores: torch.Tensor, quantile: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """(indices, labels): top-quantile samples labeled 1, bottom-quantile labeled 0."""
    if not 0 < quantile <= 0.5:
        raise InvalidArgumentError(f"quantile must lie in (0, 0.5], got {quantile}")
    order = torch.argsort(scores, stable=True)
    k = max(1, int(round(quantile * scores.shape[0])))
    low, high = order[:k], order[-k:]
    idx = torch.cat([high, low])
    labels = torch.cat([torch.ones(k, dtype=torch.long), torch.zeros(k, dtype=torch.long)])
    return idx, labels


def rgb_to_hue(rgb: torch.Tensor) -> torch.Tensor:
    """...×3 RGB in [0,1] -> hue in [0,1)."""
    r, g, b = rgb.unbind(-1)
    maxc, _ = rgb.max(dim=-1)
    minc, _ = rgb.min(dim=-1)
    delta = (maxc - minc).clamp_min(1e-12)
    h = torch.where(maxc == r, ((g - b) / delta) % 6.0,
                    torch.where(maxc == g, (b - r) / delta + 2.0, (r - g) / delta + 4.0))
    return (h / 6.0) % 1.0


def foreground_mask(depth: torch.Tensor, opacity: torch.Tensor, camera_cfg, scene_spec, tau: float = 0.5):
    """Opaque pixels in front of the midpoint between object center and background card."""
    return (opacity >= tau) & (depth < camera_cfg.distance + 0.5 * scene_spec.card_depth)


def score_attribute(image: torch.Tensor, depth: torch.Tensor, opacity: torch.Tensor, attribute: str,
                    camera_cfg, scene_spec) -> torch.Tensor:
    """Per-item score: `size` = foreground pixel fraction, `hue` = mean foreground hue."""
    if attribute not in ATTRIBUTES:
        raise InvalidArgumentError(f"unknown attribute '{attribute}', expected one of {list(ATTRIBUTES)}")
    fg = foreground_mask(depth, opacity, camera_cfg, scene_spec).to(image.dtype)
    if attribute == "size":
        return fg.flatten(1).mean(dim=1)
    hue = rgb_to_hue(image.permute(0, 2, 3, 1))
    return (hue * fg).flatten(1).sum(dim=1) / fg.flatten(1).sum(dim=1).clamp_min(1.0)


@torch.no_grad()
def fit_attribute_direction(generator, cfg, attribute: str, seed: Optional[int] = None,
                            batch_size: int = 16) -> EditDirection:
    ecfg = cfg.editing
    seed = cfg.seed if seed is None else seed
    w = sample_canonical_w(generator, ecfg.samples, seed, cfg.camera)
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    pose = canonical_pose(cfg.camera.distance)
    scores = []
    for chunk in w.split(batch_size):
        _, planes = generator.synthesize_from_w(chunk)
        out = generator.render(planes, pose, intr, res, cfg.render)
        scores.append(score_attribute(out.image, out.depth, out.opacity, attribute,
                                      cfg.camera, cfg.dataset.scene).cpu())
    idx, labels = select_extremes(torch.cat(scores), ecfg.quantile)
    direction = fit_direction(w.cpu()[idx], labels, ecfg.l2, ecfg.epochs, ecfg.lr, attribute)
    logger.info("[editing] %s direction: accuracy %.3f, min margin %.4f", attribute,
                direction.stats["accuracy"], direction.stats["min_margin"])
    return direction


def apply_edit(wp: torch.Tensor, direction: EditDirection, strength: float,
               rows: Optional[Sequence[int]] = None) -> torch.Tensor:
    """ŵ⁺ = w⁺ + strength·direction on every row (or the given rows)."""
    shift = strength * direction.direction.to(wp.device, wp.dtype)
    if rows is None:
        return wp + shift
    num_ws = wp.shape[-2]
    rows = list(rows)
    if any(not 0 <= r < num_ws for r in rows):
        raise InvalidArgumentError(f"edit rows {rows} outside [0, {num_ws - 1}]")
    select = torch.zeros(num_ws, 1, dtype=torch.bool, device=wp.device)
    select[rows] = True
    return torch.where(select, wp + shift, wp)


def edit_features(fstar: torch.Tensor, wp: torch.Tensor, wp_hat: torch.Tensor, generator) -> torch.Tensor:
    """F̂* = F* + F(ŵ⁺) - F(w⁺) on the tapped layer, exact where either difference vanishes."""
    feats, _ = generator.generator_forward(wp)
    feats_hat, _ = generator.generator_forward(wp_hat)
    f_w, f_hat = feats.tapped, feats_hat.tapped
    if fstar.shape != f_w.shape:
        raise InvalidArgumentError(f"F* {tuple(fstar.shape)} does not match tapped features {tuple(f_w.shape)}")
    return torch.where(fstar == f_w, f_hat, fstar + (f_hat - f_w))


@torch.no_grad()
def edited_triplane(generator, wp: torch.Tensor, fstar: Optional[torch.Tensor], tri_mask: Optional[torch.Tensor],
                    direction: EditDirection, strength: float, rows: Optional[Sequence[int]] = None) -> torch.Tensor:
    wp_hat = apply_edit(wp, direction, strength, rows)
    _, planes_w = generator.generator_forward(wp_hat)
    if fstar is None or tri_mask is None:
        return planes_w
    planes_f = generator.resume_forward(edit_features(fstar, wp, wp_hat, generator), wp_hat)
    return mix_triplane(planes_f, planes_w, tri_mask)


@torch.no_grad()
def edited_render(generator, wp, fstar, tri_mask, direction: EditDirection, strength: float, pose, cfg,
                  rows: Optional[Sequence[int]] = None):
    """apply_edit -> edit_features -> mix with the input-view tri-mask -> render."""
    planes = edited_triplane(generator, wp, fstar, tri_mask, direction, strength, rows)
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    return generator.render(planes, pose, intr, res, cfg.render)


def save_direction(path: str, direction: EditDirection) -> str:
    return save_checkpoint(path, {
        "direction/vector": direction.direction.detach().cpu().to(torch.float32),
        "direction/meta": json_entry({"attribute": direction.attribute, "stats": direction.stats}),
    })


def load_direction(path: str) -> EditDirection:
    entries = load_checkpoint(path)
    if "direction/vector" not in entries:
        raise InvalidArgumentError(f"{path} holds no edit direction")
    meta = read_json_entry(entries["direction/meta"]) if "direction/meta" in entries else {}
    return EditDirection(entries["direction/vector"], meta.get("attribute", ""), meta.get("stats", {}))
