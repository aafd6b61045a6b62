"""Paired (generator-sampled) and novel-view (held-out dataset) evaluation runs."""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from camera_geometry import intrinsics_from_config, orbit_pose, parse_pose_label_lenient, pose_label
from canonical_training import sample_canonical_w
from inversion import InversionModels, invert, render_bundle
from metrics import MetricsReport, eval_metrics
from synthetic_data import load_view, read_dataset_meta, split_scenes

logger = logging.getLogger(__name__)


def front_view_index(yaws) -> int:
    return int(np.argmin(np.abs(np.asarray(yaws, dtype=np.float64))))


def _variants(models: InversionModels, use_afa: bool) -> Dict[str, dict]:
    variants = {"wplus": {"use_afa": False, "use_mix": False}}
    if use_afa and models.afa is not None:
        variants["mix"] = {"use_afa": True, "use_mix": True}
    return variants


@torch.no_grad()
def evaluate_generator_samples(models: InversionModels, n: Optional[int] = None, seed: Optional[int] = None,
                               use_afa: bool = True) -> Tuple[MetricsReport, Dict]:
    """Invert n generator renders at random eval yaws; score each variant against the source render."""
    cfg, generator = models.cfg, models.generator
    n = cfg.eval.generator_samples if n is None else n
    seed = cfg.seed if seed is None else seed
    intr = intrinsics_from_config(cfg.camera)
    res = (cfg.camera.resolution, cfg.camera.resolution)
    w = sample_canonical_w(generator, n, seed, cfg.camera)
    yaws = np.random.default_rng(seed).choice(np.asarray(cfg.eval.yaws, dtype=np.float64), size=n)
    variants = _variants(models, use_afa)

    report = MetricsReport()
    for i in tqdm(range(n), desc="eval-generator", leave=False):
        pose = orbit_pose(float(yaws[i]), 0.0, cfg.camera.distance)
        _, planes = generator.synthesize_from_w(w[i:i + 1])
        gt = generator.render(planes, pose, intr, res, cfg.render)
        mask = gt.opacity[0] >= cfg.afa.tau
        label = pose_label(pose, intr)
        for name, flags in variants.items():
            _, rec = invert(models, gt.image[0], label, **flags)
            values = eval_metrics(rec.image[0].cpu(), gt.image[0].cpu(), rec.depth[0].cpu(),
                                  gt.depth[0].cpu(), mask.cpu())
            report.add(i, float(yaws[i]), values, variant=name)

    summary = {"source": "generator", "samples": n}
    df = report.frame()
    wplus = df[df["variant"] == "wplus"].set_index("scene")
    front = wplus[wplus["yaw"] == 0.0]
    if len(front):
        summary["wplus_front_mse"] = float(front["mse"].mean())
    if "mix" in variants:
        mixed = df[df["variant"] == "mix"].set_index("scene")
        summary["mix_better_fraction"] = float((mixed["mse"] <= wplus["mse"]).mean())
        summary["mix_mse"] = float(mixed["mse"].mean())
    summary["wplus_mse"] = float(wplus["mse"].mean())
    logger.info("[evaluation] generator samples: %s", summary)
    return report, summary


@torch.no_grad()
def evaluate_dataset(models: InversionModels, data_root: str, use_afa: bool = True) -> Tuple[MetricsReport, Dict]:
    """Invert the front view of every held-out scene and score all of its views."""
    cfg = models.cfg
    meta = read_dataset_meta(data_root)
    _, heldout = split_scenes(meta)
    front = front_view_index(meta["yaws"])
    variants = _variants(models, use_afa)

    report = MetricsReport()
    for scene in tqdm(heldout, desc="eval-dataset", leave=False):
        source = load_view(data_root, scene, front)
        bundles = {name: invert(models, source["image"], source["label"], **flags)[0]
                   for name, flags in variants.items()}
        for k, yaw in enumerate(meta["yaws"]):
            view = source if k == front else load_view(data_root, scene, k)
            pose = parse_pose_label_lenient(view["label"])[0]
            for name, bundle in bundles.items():
                out = render_bundle(models.generator, bundle, pose, cfg)
                values = eval_metrics(out.image[0].cpu(), view["image"], out.depth[0].cpu(), view["depth"],
                                      view["depth"] > 0)
                report.add(scene, yaw, values, variant=name)

    summary = {"source": "dataset", "scenes": len(heldout)}
    if heldout:
        df = report.frame()
        side = df[df["yaw"].abs() == max(abs(y) for y in meta["yaws"])]
        for name in variants:
            summary[f"{name}_mse"] = float(df[df["variant"] == name]["mse"].mean())
            summary[f"{name}_side_geo_err"] = float(side[side["variant"] == name]["geo_err"].mean())
    logger.info("[evaluation] held-out scenes: %s", summary)
    return report, summary
