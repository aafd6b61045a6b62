"""Analytic multi-view scenes: a shaded sphere in front of a flat background card.

Views are rendered by exact ray-surface intersection in float64. Layout:

    <root>/dataset.json
    <root>/scene_<i>/view_<k>.png | view_<k>.tpd | view_<k>.cam
    <root>/scene_<i>/factors.json
"""
import colorsys
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset
from tqdm import tqdm

from camera_geometry import CameraPose, Intrinsics, generate_rays, intrinsics_from_config, orbit_pose, pose_label
from errors import DependencyError, InvalidArgumentError
from file_formats import read_camera_label, read_depth, write_camera_label, write_depth
from utils import load_png, save_png

logger = logging.getLogger(__name__)


def sample_factors(spec, rng: np.random.Generator) -> Dict:
    """Draw one scene's generative factors."""
    r_lo, r_hi = spec.radius_range
    if not 0 < r_lo <= r_hi:
        raise InvalidArgumentError(f"radius range must be positive and ordered, got {spec.radius_range}")
    for yaw in spec.yaws:
        if abs(yaw) > spec.yaw_limit:
            raise InvalidArgumentError(f"view yaw {yaw} outside ±{spec.yaw_limit}°")
    jitter = spec.position_jitter
    return {
        "radius": float(rng.uniform(r_lo, r_hi)),
        "center": [float(rng.uniform(-jitter, jitter)), float(rng.uniform(-jitter, jitter)), 0.0],
        "hue": float(rng.uniform(*spec.hue_range)),
        "shade": float(rng.uniform(*spec.shade_range)),
        "yaws": [float(y) for y in spec.yaws],
        "pitch": float(spec.pitch),
    }


def albedo(hue: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, 0.75, 0.9))


def scene_sdf(points: torch.Tensor, factors: Dict, spec) -> torch.Tensor:
    """Signed distance of N×3 points to the sphere ∪ card scene."""
    center = torch.tensor(factors["center"], dtype=points.dtype)
    sphere = (points - center).norm(dim=-1) - factors["radius"]
    half = spec.card_half_size
    dz = (points[:, 2] - spec.card_depth).abs()
    dx = (points[:, 0].abs() - half).clamp_min(0)
    dy = (points[:, 1].abs() - half).clamp_min(0)
    card = torch.sqrt(dz ** 2 + dx ** 2 + dy ** 2)
    return torch.minimum(sphere, card)


def _sphere_hits(origins, dirs, center, radius):
    oc = origins - center
    b = (dirs * oc).sum(-1)
    c = (oc * oc).sum(-1) - radius ** 2
    disc = b * b - c
    s = -b - torch.sqrt(disc.clamp_min(0))
    hit = (disc >= 0) & (s > 0)
    return torch.where(hit, s, torch.full_like(s, float("inf")))


def _card_hits(origins, dirs, spec):
    dz = dirs[..., 2]
    safe = torch.where(dz.abs() > 1e-12, dz, torch.ones_like(dz))
    s = (spec.card_depth - origins[..., 2]) / safe
    pts = origins + s.unsqueeze(-1) * dirs
    inside = (pts[..., 0].abs() <= spec.card_half_size) & (pts[..., 1].abs() <= spec.card_half_size)
    hit = (dz.abs() > 1e-12) & (s > 0) & inside
    return torch.where(hit, s, torch.full_like(s, float("inf")))


def render_scene(factors: Dict, spec, pose: CameraPose, intr: Intrinsics,
                 res: Tuple[int, int]) -> Tuple[torch.Tensor, torch.Tensor]:
    """(image 3×H×W in [0,1], z-depth H×W; 0 where the ray hits nothing)."""
    rays = generate_rays(pose, intr, res, dtype=torch.float64)
    origins, dirs = rays.origins, rays.directions
    center = torch.tensor(factors["center"], dtype=torch.float64)
    s_sphere = _sphere_hits(origins, dirs, center, factors["radius"])
    s_card = _card_hits(origins, dirs, spec)
    s = torch.minimum(s_sphere, s_card)
    hit = torch.isfinite(s)
    on_sphere = hit & (s_sphere <= s_card)

    s_safe = torch.where(hit, s, torch.zeros_like(s))
    points = origins + s_safe.unsqueeze(-1) * dirs
    normals = (points - center) / factors["radius"]
    light = torch.tensor(spec.light_direction, dtype=torch.float64)
    light = light / light.norm()
    lambert = (normals @ light).clamp_min(0)
    shading = spec.ambient + (1.0 - spec.ambient) * lambert
    sphere_rgb = torch.from_numpy(albedo(factors["hue"])) * shading.unsqueeze(-1)
    card_rgb = torch.full_like(sphere_rgb, factors["shade"])
    rgb = torch.where(on_sphere.unsqueeze(-1), sphere_rgb, card_rgb)
    rgb = torch.where(hit.unsqueeze(-1), rgb, torch.zeros_like(rgb))

    cos = dirs @ pose.rotation[:, 2]
    depth = torch.where(hit, s_safe * cos, torch.zeros_like(s))
    return rgb.permute(2, 0, 1).clamp(0, 1), depth


def scene_dir(root: str, index: int) -> str:
    return os.path.join(root, f"scene_{index:05d}")


def _write_scene(root: str, index: int, cfg, seed: int) -> Dict:
    spec = cfg.dataset.scene
    rng = np.random.default_rng([seed, index])
    factors = sample_factors(spec, rng)
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    out_dir = scene_dir(root, index)
    os.makedirs(out_dir, exist_ok=True)
    for k, yaw in enumerate(factors["yaws"]):
        pose = orbit_pose(yaw, factors["pitch"], cfg.camera.distance)
        image, depth = render_scene(factors, spec, pose, intr, res)
        save_png(os.path.join(out_dir, f"view_{k}.png"), image)
        write_depth(os.path.join(out_dir, f"view_{k}.tpd"), depth)
        write_camera_label(os.path.join(out_dir, f"view_{k}.cam"), pose_label(pose, intr))
    with open(os.path.join(out_dir, "factors.json"), "w", encoding="utf-8") as f:
        json.dump(factors, f, sort_keys=True, indent=1)
    return factors


def make_dataset(root: str, cfg, n: Optional[int] = None, seed: Optional[int] = None) -> str:
    """Write n scenes (config default) under root; identical seeds give identical bytes."""
    n = cfg.dataset.num_scenes if n is None else n
    seed = cfg.seed if seed is None else seed
    if n < 1:
        raise InvalidArgumentError(f"dataset needs at least one scene, got {n}")
    try:
        os.makedirs(root, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {root}: {e}")
    logger.info("[synthetic_data] writing %d scenes to %s", n, root)
    with ThreadPoolExecutor(max_workers=max(1, cfg.dataset.workers)) as pool:
        jobs = pool.map(lambda i: _write_scene(root, i, cfg, seed), range(n))
        for _ in tqdm(jobs, total=n, desc="make-data", leave=False):
            pass
    meta = {
        "num_scenes": n,
        "eval_scenes": min(cfg.dataset.eval_scenes, n - 1) if n > 1 else 0,
        "yaws": [float(y) for y in cfg.dataset.scene.yaws],
        "resolution": cfg.camera.resolution,
        "seed": seed,
    }
    with open(os.path.join(root, "dataset.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
    return root


def read_dataset_meta(root: str) -> Dict:
    path = os.path.join(root, "dataset.json")
    if not os.path.exists(path):
        raise DependencyError(f"no dataset at {root} (run make-data first)")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def read_factors(root: str, index: int) -> Dict:
    with open(os.path.join(scene_dir(root, index), "factors.json"), "r", encoding="utf-8") as f:
        return json.load(f)


def split_scenes(meta: Dict) -> Tuple[List[int], List[int]]:
    """(train indices, held-out indices); the last eval_scenes scenes are held out."""
    n, held = meta["num_scenes"], meta["eval_scenes"]
    return list(range(n - held)), list(range(n - held, n))


def load_view(root: str, scene: int, view: int) -> Dict:
    base = os.path.join(scene_dir(root, scene), f"view_{view}")
    return {
        "image": load_png(base + ".png"),
        "depth": read_depth(base + ".tpd"),
        "label": read_camera_label(base + ".cam"),
        "scene": scene,
        "view": view,
    }


class MultiViewDataset(Dataset):
    """One item per (scene, view)."""

    def __init__(self, root: str, scenes: Optional[Sequence[int]] = None, views: Optional[Sequence[int]] = None):
        self.root = root
        self.meta = read_dataset_meta(root)
        self.scenes = list(range(self.meta["num_scenes"])) if scenes is None else list(scenes)
        all_views = list(range(len(self.meta["yaws"])))
        self.views = all_views if views is None else list(views)
        self.items = [(s, v) for s in self.scenes for v in self.views]

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int) -> Dict:
        scene, view = self.items[idx]
        item = load_view(self.root, scene, view)
        item["scene_slot"] = self.scenes.index(scene)
        return item
