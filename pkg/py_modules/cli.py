"""Command-line entry point: `python py_modules/cli.py <command> [options]`.

Exit codes: 0 success, 2 invalid arguments, 3 missing upstream artifact, 1 anything else.
"""
import argparse
import logging
import os
import sys
import uuid
from typing import Dict, List, Optional

import torch

from afa_refinement import train_stage2
from camera_geometry import orbit_pose
from canonical_training import DepthPrior, estimate_depth_prior, train_stage1
from checkpoints import checkpoint_paths, load_encoder, load_generator
from config import TriInvertConfig, configure_threads, load_config, outputs_root, select_device
from editing import ATTRIBUTES, edited_render, fit_attribute_direction, load_direction, save_direction
from errors import InvalidArgumentError, TriInvertError
from evaluation import evaluate_dataset, evaluate_generator_samples
from file_formats import read_camera_label, write_depth, write_tri_mask
from generator_training import train_toy_generator
from inversion import InversionBundle, invert, load_models, render_views
from job_registry import create_job, set_registry_path, update_job
from markdown_writer import save_report
from pipeline_graph import check_requirements, pipeline_status, to_mermaid
from progress import set_base_dir, set_progress
from synthetic_data import make_dataset
from utils import load_png, save_png

logger = logging.getLogger(__name__)


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="triinvert", description="Encoder-based inversion and editing for a toy tri-plane generator.")
    parser.add_argument("--config", default=None, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides config.seed")
    parser.add_argument("--out", default=outputs_root(), help="artifact root (default: $TRIINVERT_OUTPUTS or outputs)")
    parser.add_argument("--task-id", default=None, help="progress/job id (default: random)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="render the synthetic multi-view dataset")
    p.add_argument("--scenes", type=int, default=None)

    sub.add_parser("train-gen", help="fit the toy tri-plane generator")

    p = sub.add_parser("fit-depth-prior", help="average background depth of canonical samples")
    p.add_argument("--samples", type=int, default=None)

    p = sub.add_parser("train-encoder", help="first-stage encoder training")
    p.add_argument("--no-latent-disc", action="store_true")
    p.add_argument("--no-background-loss", action="store_true")

    p = sub.add_parser("train-afa", help="second-stage feature alignment training")
    p.add_argument("--no-mix", action="store_true")
    p.add_argument("--no-background-loss", action="store_true")

    p = sub.add_parser("invert", help="invert one image into a bundle")
    p.add_argument("--image", required=True, help="RGB PNG at the configured resolution")
    p.add_argument("--camera", required=True, help="25-float camera label file (.cam)")
    p.add_argument("--bundle", default=None, help="output path (default: <out>/bundles/<image stem>.tpck)")
    p.add_argument("--no-afa", action="store_true")
    p.add_argument("--no-mix", action="store_true")

    p = sub.add_parser("render", help="render a bundle at several yaws")
    p.add_argument("--bundle", required=True)
    p.add_argument("--yaws", type=_floats, default=None)
    p.add_argument("--views-dir", default=None)

    p = sub.add_parser("fit-direction", help="fit an attribute direction in W")
    p.add_argument("--attribute", choices=ATTRIBUTES, required=True)
    p.add_argument("--output", default=None)

    p = sub.add_parser("edit", help="render edits of a bundle along a direction")
    p.add_argument("--bundle", required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--strengths", type=_floats, default=None)
    p.add_argument("--rows", type=_ints, default=None)
    p.add_argument("--yaws", type=_floats, default=None)
    p.add_argument("--views-dir", default=None)

    p = sub.add_parser("eval", help="paired or novel-view evaluation")
    p.add_argument("--source", choices=("generator", "dataset"), default="generator")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--no-afa", action="store_true")

    sub.add_parser("status", help="print the pipeline graph with artifact presence")
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s", force=True)


def with_generator_sections(cfg: TriInvertConfig, generator_cfg: TriInvertConfig) -> TriInvertConfig:
    """Architecture and camera always follow the trained generator."""
    cfg.generator = generator_cfg.generator
    cfg.camera = generator_cfg.camera
    return cfg


def _seeded(cfg: TriInvertConfig, seed: Optional[int]) -> TriInvertConfig:
    if seed is not None:
        cfg.seed = seed
    return cfg


# ---------------------------------------------------------------- commands

def cmd_make_data(args, cfg, paths, device) -> Dict:
    root = make_dataset(paths["data"], cfg, args.scenes)
    return {"dataset": root}


def cmd_train_gen(args, cfg, paths, device) -> Dict:
    check_requirements("train-gen", args.out)
    return train_toy_generator(cfg, paths["data"], paths["generator"], args.task_id, device)


def cmd_fit_depth_prior(args, cfg, paths, device) -> Dict:
    check_requirements("fit-depth-prior", args.out)
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    dp = cfg.depth_prior
    n = dp.samples if args.samples is None else args.samples
    prior = estimate_depth_prior(generator, n, dp.tau, cfg.seed, cfg, dp.batch_size)
    prior.save(paths["depth_prior"])
    return {"d_avg": prior.d_avg, "background_pixels": prior.background_pixels}


def cmd_train_encoder(args, cfg, paths, device) -> Dict:
    if args.no_latent_disc:
        cfg.stage1.use_latent_disc = False
    if args.no_background_loss:
        cfg.stage1.use_background_loss = False
    skip = () if cfg.stage1.use_background_loss else ("depth_prior",)
    check_requirements("train-encoder", args.out, skip)
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    prior = DepthPrior.load(paths["depth_prior"]) if cfg.stage1.use_background_loss else None
    log_path = os.path.join(args.out, "logs", "train_encoder.csv")
    return train_stage1(cfg, paths["data"], generator, prior, paths["encoder"], log_path, args.task_id, device)


def cmd_train_afa(args, cfg, paths, device) -> Dict:
    if args.no_mix:
        cfg.afa.use_mix = False
    if args.no_background_loss:
        cfg.afa.use_background_loss = False
    skip = () if cfg.afa.use_background_loss else ("depth_prior",)
    check_requirements("train-afa", args.out, skip)
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    encoder, enc_cfg, _ = load_encoder(paths["encoder"], device)
    cfg.encoder = enc_cfg.encoder
    prior = DepthPrior.load(paths["depth_prior"]) if cfg.afa.use_background_loss else None
    log_path = os.path.join(args.out, "logs", "train_afa.csv")
    return train_stage2(cfg, paths["data"], generator, encoder, prior, paths["afa"], log_path, args.task_id, device)


def cmd_invert(args, cfg, paths, device) -> Dict:
    check_requirements("invert", args.out, ("afa",) if args.no_afa else ())
    models = load_models(args.out, use_afa=not args.no_afa, device=device)
    image = load_png(args.image)
    res = models.cfg.camera.resolution
    if tuple(image.shape[1:]) != (res, res):
        raise InvalidArgumentError(f"image is {image.shape[2]}×{image.shape[1]}, the models expect {res}×{res}")
    bundle, rec = invert(models, image, read_camera_label(args.camera), use_afa=not args.no_afa,
                         use_mix=not args.no_mix)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    path = args.bundle or os.path.join(args.out, "bundles", f"{stem}.tpck")
    bundle.save(path)
    base = os.path.splitext(path)[0]
    save_png(base + "_rec.png", rec.image[0].cpu())
    write_depth(base + "_rec.tpd", rec.depth[0].cpu())
    write_tri_mask(base + "_trimask.tpm", bundle.tri_mask.cpu())
    return {"bundle": path, **bundle.meta}


def cmd_render(args, cfg, paths, device) -> Dict:
    check_requirements("render", args.out, extra={"bundle": args.bundle})
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    bundle = InversionBundle.load(args.bundle)
    yaws = args.yaws or cfg.eval.yaws
    out_dir = args.views_dir or os.path.splitext(args.bundle)[0] + "_views"
    images = render_views(generator, bundle, yaws, out_dir, cfg)
    return {"views": out_dir, "count": len(images)}


def cmd_fit_direction(args, cfg, paths, device) -> Dict:
    check_requirements("fit-direction", args.out)
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    direction = fit_attribute_direction(generator, cfg, args.attribute)
    path = args.output or os.path.join(args.out, "directions", f"{args.attribute}.tpck")
    save_direction(path, direction)
    return {"direction": path, **direction.stats}


@torch.no_grad()
def cmd_edit(args, cfg, paths, device) -> Dict:
    check_requirements("edit", args.out, extra={"bundle": args.bundle, "direction": args.direction})
    generator, gen_cfg = load_generator(paths["generator"], device)
    cfg = with_generator_sections(cfg, gen_cfg)
    bundle = InversionBundle.load(args.bundle)
    direction = load_direction(args.direction)
    strengths = args.strengths or cfg.editing.strengths
    rows = args.rows if args.rows is not None else cfg.editing.rows
    yaws = args.yaws or cfg.eval.yaws
    out_dir = args.views_dir or os.path.splitext(args.bundle)[0] + f"_edit_{direction.attribute or 'dir'}"
    os.makedirs(out_dir, exist_ok=True)

    wp = bundle.wplus.unsqueeze(0).to(device)
    fstar = bundle.fstar.unsqueeze(0).to(device)
    mask = bundle.tri_mask.unsqueeze(0).to(device)
    count = 0
    for strength in strengths:
        for yaw in yaws:
            pose = orbit_pose(yaw, 0.0, cfg.camera.distance)
            out = edited_render(generator, wp, fstar, mask, direction, strength, pose, cfg, rows)
            save_png(os.path.join(out_dir, f"s{strength:+.2f}_yaw_{yaw:+06.1f}.png"), out.image[0].cpu())
            count += 1
    return {"views": out_dir, "count": count}


def cmd_eval(args, cfg, paths, device) -> Dict:
    skip = ["afa"] if args.no_afa else []
    if args.source == "generator":
        skip.append("data")
    check_requirements("eval", args.out, skip)
    models = load_models(args.out, use_afa=not args.no_afa, device=device)
    _seeded(models.cfg, args.seed)
    if args.source == "generator":
        report, summary = evaluate_generator_samples(models, args.samples, use_afa=not args.no_afa)
    else:
        report, summary = evaluate_dataset(models, paths["data"], use_afa=not args.no_afa)
    written = save_report(args.out, report, summary, to_mermaid(status=pipeline_status(args.out)))
    return {**summary, **written}


def cmd_status(args, cfg, paths, device) -> Dict:
    status = pipeline_status(args.out)
    print(to_mermaid(status=status))
    return status


COMMANDS = {
    "make-data": cmd_make_data,
    "train-gen": cmd_train_gen,
    "fit-depth-prior": cmd_fit_depth_prior,
    "train-encoder": cmd_train_encoder,
    "train-afa": cmd_train_afa,
    "invert": cmd_invert,
    "render": cmd_render,
    "fit-direction": cmd_fit_direction,
    "edit": cmd_edit,
    "eval": cmd_eval,
    "status": cmd_status,
}


def _job_args(args) -> Dict:
    return {k: v for k, v in vars(args).items() if isinstance(v, (str, int, float, bool, list, type(None)))}


def run(args) -> Dict:
    configure_threads()
    cfg = load_config(args.config, args.seed)
    device = select_device()
    paths = checkpoint_paths(args.out)
    return COMMANDS[args.command](args, cfg, paths, device)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InvalidArgumentError as e:
        configure_logging(False)
        logger.error("[cli] %s", e)
        return e.exit_code
    configure_logging(args.verbose)
    os.makedirs(args.out, exist_ok=True)
    set_base_dir(args.out)
    set_registry_path(args.out)
    args.task_id = args.task_id or str(uuid.uuid4())
    track = args.command != "status"
    if track:
        create_job(args.task_id, args.command, _job_args(args))
        update_job(args.task_id, "running")
        set_progress(args.task_id, "running", 0, {"stage": args.command})

    try:
        result = run(args) or {}
    except TriInvertError as e:
        logger.error("[cli] %s failed: %s", args.command, e)
        if track:
            update_job(args.task_id, "error", {"message": str(e)})
            set_progress(args.task_id, "error", 100, {"message": str(e)})
        return e.exit_code
    except Exception as e:
        logger.exception("[cli] %s crashed", args.command)
        if track:
            update_job(args.task_id, "error", {"message": str(e)})
            set_progress(args.task_id, "error", 100, {"message": str(e)})
        return 1

    if track:
        canceled = bool(result.get("canceled"))
        update_job(args.task_id, "canceled" if canceled else "completed",
                   {k: v for k, v in result.items() if isinstance(v, (str, int, float, bool))})
        if not canceled:
            set_progress(args.task_id, "done", 100, {"stage": args.command})
    logger.info("[cli] %s: %s", args.command, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
