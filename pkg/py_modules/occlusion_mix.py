"""Input-view visibility on the tri-plane grid and occlusion-aware tri-plane blending."""
from typing import Sequence

import torch
import torch.nn.functional as F

from camera_geometry import CameraPose, Intrinsics, backproject
from errors import InvalidArgumentError
from volume_rendering import PLANE_AXES


def visible_points(depth: torch.Tensor, pose: CameraPose, intr: Intrinsics, opacity: torch.Tensor,
                   tau: float = 0.5) -> torch.Tensor:
    """World points of first-surface depth for pixels with opacity >= tau, N×3 (N <= H·W)."""
    if depth.shape != opacity.shape:
        raise InvalidArgumentError(f"depth {tuple(depth.shape)} and opacity {tuple(opacity.shape)} differ")
    return backproject(depth.detach(), pose, intr, mask=opacity.detach() >= tau)


def build_tri_mask(points: torch.Tensor, resolution: int, dilation: int = 1) -> torch.Tensor:
    """Mark the nearest node of each point on the xy/xz/yz planes, then dilate; 3×R×R bool."""
    if resolution < 2:
        raise InvalidArgumentError(f"tri-mask resolution must be >= 2, got {resolution}")
    if dilation < 0:
        raise InvalidArgumentError(f"dilation must be >= 0, got {dilation}")
    mask = torch.zeros(3, resolution * resolution, dtype=torch.float32)
    if points.numel():
        pts = points.detach().to(torch.float64).reshape(-1, 3).clamp(-1.0, 1.0).cpu()
        idx = torch.round((pts + 1.0) * 0.5 * (resolution - 1)).long()
        for plane, (col_axis, row_axis) in enumerate(PLANE_AXES):
            flat = idx[:, row_axis] * resolution + idx[:, col_axis]
            mask[plane].index_fill_(0, flat, 1.0)
    mask = mask.reshape(3, resolution, resolution)
    if dilation:
        size = 2 * dilation + 1
        mask = F.max_pool2d(mask.unsqueeze(0), size, stride=1, padding=dilation)[0]
    return mask > 0


def tri_masks_from_render(depth: torch.Tensor, opacity: torch.Tensor, poses: Sequence[CameraPose],
                          intr: Intrinsics, resolution: int, dilation: int = 1, tau: float = 0.5) -> torch.Tensor:
    """Per-item tri-masks (B×3×R×R) from batched B×H×W render depth/opacity."""
    masks = [build_tri_mask(visible_points(d, pose, intr, o, tau), resolution, dilation)
             for d, o, pose in zip(depth, opacity, poses)]
    return torch.stack(masks).to(depth.device)


def mix_triplane(tp_fstar: torch.Tensor, tp_wplus: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked cells from tp_fstar, the rest from tp_wplus; the mask is shared across channels."""
    if tp_fstar.shape != tp_wplus.shape:
        raise InvalidArgumentError(f"tri-plane shapes differ: {tuple(tp_fstar.shape)} vs {tuple(tp_wplus.shape)}")
    expected = tp_fstar.shape[:-3] + tp_fstar.shape[-2:]
    if mask.shape != expected:
        raise InvalidArgumentError(f"tri-mask must be {tuple(expected)}, got {tuple(mask.shape)}")
    return torch.where(mask.to(torch.bool).unsqueeze(-3), tp_fstar, tp_wplus)
