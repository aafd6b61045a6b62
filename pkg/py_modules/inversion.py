"""Single-image inversion into a self-contained bundle, and multi-view rendering of bundles."""
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch

from afa_refinement import refine
from camera_geometry import intrinsics_from_config, orbit_pose, parse_pose_label_lenient
from checkpoints import checkpoint_paths, load_afa, load_encoder, load_generator
from errors import DependencyError, InvalidArgumentError
from file_formats import json_entry, load_checkpoint, read_json_entry, save_checkpoint, write_depth
from utils import save_png

logger = logging.getLogger(__name__)


@dataclass
class InversionModels:
    cfg: object
    generator: torch.nn.Module
    encoder: torch.nn.Module
    afa: Optional[torch.nn.Module] = None
    device: torch.device = torch.device("cpu")


@dataclass
class InversionBundle:
    wplus: torch.Tensor             # L×d_w
    fstar: torch.Tensor             # C_f×R_f×R_f
    tri_mask: torch.Tensor          # 3×R×R bool
    triplane_mix: torch.Tensor      # 3×C×R×R
    camera_label: torch.Tensor      # 25
    meta: Dict = field(default_factory=dict)

    def save(self, path: str) -> str:
        return save_checkpoint(path, {
            "bundle/wplus": self.wplus.detach().cpu().float(),
            "bundle/fstar": self.fstar.detach().cpu().float(),
            "bundle/tri_mask": self.tri_mask.detach().cpu().to(torch.uint8),
            "bundle/triplane_mix": self.triplane_mix.detach().cpu().float(),
            "bundle/camera_label": self.camera_label.detach().cpu().float(),
            "bundle/meta": json_entry(self.meta),
        })

    @classmethod
    def load(cls, path: str) -> "InversionBundle":
        if not os.path.exists(path):
            raise DependencyError(f"missing inversion bundle: {path}")
        e = load_checkpoint(path)
        missing = [k for k in ("wplus", "fstar", "tri_mask", "triplane_mix", "camera_label") if f"bundle/{k}" not in e]
        if missing:
            raise InvalidArgumentError(f"{path} is not an inversion bundle (missing {missing})")
        return cls(e["bundle/wplus"], e["bundle/fstar"], e["bundle/tri_mask"].to(torch.bool),
                   e["bundle/triplane_mix"], e["bundle/camera_label"],
                   read_json_entry(e["bundle/meta"]) if "bundle/meta" in e else {})


def load_models(out_dir: str, use_afa: bool = True, device: torch.device = torch.device("cpu")) -> InversionModels:
    paths = checkpoint_paths(out_dir)
    generator, _ = load_generator(paths["generator"], device)
    encoder, enc_cfg, _ = load_encoder(paths["encoder"], device)
    encoder.eval().requires_grad_(False)
    afa, cfg = None, enc_cfg
    if use_afa:
        afa, cfg, _ = load_afa(paths["afa"], device)
        afa.eval().requires_grad_(False)
    return InversionModels(cfg, generator, encoder, afa, device)


@torch.no_grad()
def invert(models: InversionModels, image: torch.Tensor, camera_label: torch.Tensor,
           use_afa: bool = True, use_mix: bool = True):
    """encode -> render w⁺ -> AFA -> resume -> tri-mask from the w⁺ render -> mix.

    Returns (bundle, reconstruction RenderOutput at the input view).
    """
    cfg, generator = models.cfg, models.generator
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidArgumentError(f"input image must be 3×H×W, got {tuple(image.shape)}")
    afa = models.afa if use_afa else None
    if use_afa and afa is None:
        raise DependencyError("AFA requested but no AFA checkpoint loaded")
    pose = parse_pose_label_lenient(camera_label)[0]
    images = image.unsqueeze(0).to(models.device)

    t0 = time.perf_counter()
    wp = models.encoder(images)
    t1 = time.perf_counter()
    result = refine(generator, afa, images, wp, [pose], cfg, use_mix, cfg.afa.dilation, cfg.afa.tau)
    t2 = time.perf_counter()

    planes = result["planes"][0]
    res = planes.shape[-1]
    mask = result["tri_mask"][0] if result["tri_mask"] is not None else torch.zeros(3, res, res, dtype=torch.bool)
    if afa is not None and not use_mix:
        mask = torch.ones(3, res, res, dtype=torch.bool)
    meta = {"use_afa": afa is not None, "use_mix": bool(use_mix and afa is not None),
            "encoder_seconds": round(t1 - t0, 6), "refine_seconds": round(t2 - t1, 6),
            "visible_cells": int(mask.sum())}
    bundle = InversionBundle(wp[0].cpu(), result["fstar"][0].cpu(), mask.cpu(), planes.cpu(),
                             torch.as_tensor(camera_label, dtype=torch.float32).reshape(-1).cpu(), meta)
    return bundle, render_bundle(generator, bundle, pose, cfg)


@torch.no_grad()
def render_bundle(generator, bundle: InversionBundle, pose, cfg):
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    planes = bundle.triplane_mix.to(generator.w_avg.device).unsqueeze(0)
    return generator.render(planes, pose, intr, res, cfg.render)


def render_views(generator, bundle: InversionBundle, yaws: Sequence[float], out_dir: str, cfg,
                 pitch: float = 0.0) -> List[str]:
    """One PNG and one TPD1 depth map per yaw; returns the PNG paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for yaw in yaws:
        out = render_bundle(generator, bundle, orbit_pose(yaw, pitch, cfg.camera.distance), cfg)
        stem = os.path.join(out_dir, f"yaw_{yaw:+06.1f}")
        save_png(stem + ".png", out.image[0].cpu())
        write_depth(stem + ".tpd", out.depth[0].cpu())
        paths.append(stem + ".png")
    logger.info("[inversion] rendered %d views into %s", len(paths), out_dir)
    return paths
