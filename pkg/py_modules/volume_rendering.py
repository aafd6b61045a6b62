"""Tri-plane point sampling and volume rendering.

Plane order is (xy, xz, yz). A plane stores features on an R×R node grid
spanning [-1, 1]; node k of an axis sits at -1 + 2k/(R-1), columns index the
first coordinate of the pair and rows the second.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from camera_geometry import CameraPose, Intrinsics, forward_cosines, generate_rays
from errors import InvalidArgumentError

# (column axis, row axis) per plane
PLANE_AXES = ((0, 1), (0, 2), (1, 2))


@dataclass
class RenderOutput:
    image: torch.Tensor     # B×3×H×W in [0,1]
    depth: torch.Tensor     # B×H×W camera z-depth
    opacity: torch.Tensor   # B×H×W in [0,1]


def project_onto_planes(points: torch.Tensor) -> torch.Tensor:
    """... × 3 points -> ... × 3 × 2 plane coordinates (column, row)."""
    return torch.stack([points[..., list(axes)] for axes in PLANE_AXES], dim=-2)


def sample_triplane(planes: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinear tri-plane features, summed over planes.

    planes: B×3×C×R×R (or 3×C×R×R); points: B×N×3 (or N×3). Returns B×N×C
    (or N×C). Out-of-cube points clamp to the border.
    """
    unbatched = planes.ndim == 4
    if unbatched:
        planes, points = planes.unsqueeze(0), points.unsqueeze(0)
    if planes.ndim != 5 or planes.shape[1] != 3:
        raise InvalidArgumentError(f"tri-plane must be B×3×C×R×R, got {tuple(planes.shape)}")
    b, _, c, h, w = planes.shape
    n = points.shape[1]
    coords = project_onto_planes(points.to(planes.dtype))           # B×N×3×2
    grid = coords.permute(0, 2, 1, 3).reshape(b * 3, 1, n, 2)
    feats = F.grid_sample(planes.reshape(b * 3, c, h, w), grid, mode="bilinear",
                          padding_mode="border", align_corners=True)  # (B·3)×C×1×N
    feats = feats.reshape(b, 3, c, n).sum(dim=1).permute(0, 2, 1)
    return feats[0] if unbatched else feats


def composite(colors: torch.Tensor, sigmas: torch.Tensor, deltas: torch.Tensor,
              t_vals: torch.Tensor, eps: float = 1e-10):
    """Alpha-composite S samples per ray.

    colors ...×S×3, sigmas/deltas/t_vals ...×S. Returns (image ...×3,
    depth ..., opacity ..., weights ...×S).
    """
    alpha = 1.0 - torch.exp(-sigmas * deltas)
    keep = 1.0 - alpha
    trans = torch.cumprod(torch.cat([torch.ones_like(keep[..., :1]), keep[..., :-1]], dim=-1), dim=-1)
    weights = trans * alpha
    image = (weights.unsqueeze(-1) * colors).sum(dim=-2)
    opacity = weights.sum(dim=-1)
    depth = (weights * t_vals).sum(dim=-1) / opacity.clamp_min(eps)
    return image, depth, opacity, weights


def stratified_depths(t_near: float, t_far: float, samples: int, shape: Tuple[int, ...],
                      dtype, device, generator: torch.Generator = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Sample depths per ray in S equal bins: bin midpoints, or uniform jitter when a generator is given.

    Returns (t ...×S, dt ...×S) where dt is the z-depth spacing to the next sample
    (the bin width for the last one).
    """
    if samples < 2:
        raise InvalidArgumentError(f"samples per ray must be >= 2, got {samples}")
    if not t_near < t_far:
        raise InvalidArgumentError(f"t_near ({t_near}) must be smaller than t_far ({t_far})")
    edges = torch.linspace(t_near, t_far, samples + 1, dtype=dtype, device=device)
    lower, width = edges[:-1], (t_far - t_near) / samples
    if generator is None:
        t = (lower + 0.5 * width).expand(*shape, samples)
    else:
        jitter = torch.rand(*shape, samples, generator=generator, dtype=dtype).to(device)
        t = lower + jitter * width
    dt = torch.cat([t[..., 1:] - t[..., :-1], torch.full_like(t[..., :1], width)], dim=-1)
    return t, dt


def render_rays(decoder, planes: torch.Tensor, origins: torch.Tensor, directions: torch.Tensor,
                cosines: torch.Tensor, render_cfg, generator: torch.Generator = None) -> RenderOutput:
    """Render B×H×W rays through B tri-planes; depths are camera z-depths."""
    b, h, w, _ = origins.shape
    s = render_cfg.samples_per_ray
    t, dt = stratified_depths(render_cfg.t_near, render_cfg.t_far, s, (b, h, w),
                              planes.dtype, planes.device, generator)
    scale = 1.0 / cosines.unsqueeze(-1)                              # ray distance per unit z
    points = origins.unsqueeze(-2) + (t * scale).unsqueeze(-1) * directions.unsqueeze(-2)
    feats = sample_triplane(planes, points.reshape(b, -1, 3))
    rgb, sigma = decoder(feats)
    rgb = rgb.reshape(b, h, w, s, 3)
    sigma = sigma.reshape(b, h, w, s)
    image, depth, opacity, _ = composite(rgb, sigma, dt * scale, t, render_cfg.eps)
    return RenderOutput(image.permute(0, 3, 1, 2), depth, opacity)


def decode_and_render(decoder, planes: torch.Tensor,
                      poses: Union[CameraPose, Sequence[CameraPose]], intr: Intrinsics,
                      res: Tuple[int, int], render_cfg, generator: torch.Generator = None) -> RenderOutput:
    """Render tri-planes (B×3×C×R×R) from one pose per batch item (or one shared pose)."""
    if planes.ndim == 4:
        planes = planes.unsqueeze(0)
    b = planes.shape[0]
    if isinstance(poses, CameraPose):
        poses = [poses] * b
    if len(poses) != b:
        raise InvalidArgumentError(f"got {len(poses)} poses for {b} tri-planes")
    origins, dirs, cosines = [], [], []
    for pose in poses:
        rays = generate_rays(pose, intr, res, dtype=planes.dtype)
        origins.append(rays.origins)
        dirs.append(rays.directions)
        cosines.append(forward_cosines(rays, pose))
    device = planes.device
    return render_rays(decoder, planes, torch.stack(origins).to(device), torch.stack(dirs).to(device),
                       torch.stack(cosines).to(device), render_cfg, generator)
