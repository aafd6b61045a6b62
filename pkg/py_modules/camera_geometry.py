"""Pinhole cameras, ray generation and depth back-projection.

Conventions: world scene lives in [-1, 1]^3 with +y up. Camera frames are
OpenCV style (x right, y down, z forward) and poses are camera-to-world.
Intrinsics are in normalized pixel units, so a pixel (i, j) of an H×W image
sits at u = (j + 0.5) / W, v = (i + 0.5) / H. Depth is camera-space z.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch

from errors import InvalidArgumentError, require

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        require(self.fx > 0 and self.fy > 0, f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        require(0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0,
                f"principal point must lie in [0,1], got ({self.cx}, {self.cy})")

    def matrix(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor([[self.fx, 0.0, self.cx],
                             [0.0, self.fy, self.cy],
                             [0.0, 0.0, 1.0]], dtype=dtype)


@dataclass(frozen=True)
class CameraPose:
    rotation: torch.Tensor      # 3×3 camera-to-world, float64
    translation: torch.Tensor   # 3, camera center in world units

    def __post_init__(self):
        rot = torch.as_tensor(self.rotation, dtype=torch.float64)
        trans = torch.as_tensor(self.translation, dtype=torch.float64).reshape(-1)
        require(rot.shape == (3, 3), f"rotation must be 3×3, got {tuple(rot.shape)}")
        require(trans.shape == (3,), f"translation must have 3 entries, got {tuple(trans.shape)}")
        err = (rot.T @ rot - torch.eye(3, dtype=torch.float64)).abs().max().item()
        require(err <= _ORTHO_TOL, f"rotation is not orthonormal (max error {err:.2e})")
        require(abs(torch.linalg.det(rot).item() - 1.0) <= _ORTHO_TOL, "rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def matrix(self, dtype=torch.float64) -> torch.Tensor:
        mat = torch.eye(4, dtype=torch.float64)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat.to(dtype)


@dataclass(frozen=True)
class RayBundle:
    origins: torch.Tensor       # H×W×3
    directions: torch.Tensor    # H×W×3, unit length


def intrinsics_from_config(cam_cfg) -> Intrinsics:
    return Intrinsics(cam_cfg.fx, cam_cfg.fy, cam_cfg.cx, cam_cfg.cy)


def look_at(eye: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0),
            up: Sequence[float] = (0.0, 1.0, 0.0)) -> CameraPose:
    eye_t = torch.as_tensor(eye, dtype=torch.float64)
    forward = torch.as_tensor(target, dtype=torch.float64) - eye_t
    if forward.norm() == 0:
        raise InvalidArgumentError("camera eye coincides with its target")
    forward = forward / forward.norm()
    down = -torch.as_tensor(up, dtype=torch.float64)
    right = torch.linalg.cross(down, forward)
    if right.norm() < 1e-12:
        raise InvalidArgumentError("up vector is parallel to the viewing direction")
    right = right / right.norm()
    down = torch.linalg.cross(forward, right)
    rotation = torch.stack([right, down, forward], dim=1)
    return CameraPose(rotation, eye_t)


def canonical_pose(distance: float) -> CameraPose:
    """Front-facing camera on the -z axis looking at the origin, +y up."""
    if not distance > 0:
        raise InvalidArgumentError(f"camera distance must be positive, got {distance}")
    return look_at((0.0, 0.0, -float(distance)))


def orbit_pose(yaw_deg: float, pitch_deg: float, distance: float) -> CameraPose:
    """Camera on a sphere around the origin; yaw 0 / pitch 0 is the canonical pose."""
    if not distance > 0:
        raise InvalidArgumentError(f"camera distance must be positive, got {distance}")
    yaw, pitch = math.radians(yaw_deg), math.radians(pitch_deg)
    eye = (distance * math.sin(yaw) * math.cos(pitch),
           distance * math.sin(pitch),
           -distance * math.cos(yaw) * math.cos(pitch))
    return look_at(eye)


def pose_label(pose: CameraPose, intr: Intrinsics) -> torch.Tensor:
    """25-vector conditioning label: flattened 4×4 camera-to-world ‖ flattened 3×3 K."""
    return torch.cat([pose.matrix().reshape(-1), intr.matrix().reshape(-1)])


def parse_pose_label(label: torch.Tensor) -> Tuple[CameraPose, Intrinsics]:
    label = torch.as_tensor(label, dtype=torch.float64).reshape(-1)
    if label.shape[0] != 25:
        raise InvalidArgumentError(f"pose label must have 25 entries, got {label.shape[0]}")
    mat = label[:16].reshape(4, 4)
    k = label[16:].reshape(3, 3)
    pose = CameraPose(mat[:3, :3].clone(), mat[:3, 3].clone())
    intr = Intrinsics(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]))
    return pose, intr


def parse_pose_label_lenient(label: torch.Tensor) -> Tuple[CameraPose, Intrinsics]:
    """Like parse_pose_label, but re-orthonormalizes float32-rounded rotations."""
    label = torch.as_tensor(label, dtype=torch.float64).reshape(-1)
    if label.shape[0] != 25:
        raise InvalidArgumentError(f"pose label must have 25 entries, got {label.shape[0]}")
    mat = label[:16].reshape(4, 4)
    u, _, vh = torch.linalg.svd(mat[:3, :3])
    rot = u @ vh
    if torch.linalg.det(rot) < 0:
        raise InvalidArgumentError("pose label rotation is a reflection")
    k = label[16:].reshape(3, 3)
    return CameraPose(rot, mat[:3, 3].clone()), Intrinsics(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]))


def pixel_grid(height: int, width: int, dtype=torch.float64) -> Tuple[torch.Tensor, torch.Tensor]:
    """Normalized pixel-center coordinates (u, v), each H×W."""
    v = (torch.arange(height, dtype=dtype) + 0.5) / height
    u = (torch.arange(width, dtype=dtype) + 0.5) / width
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    return uu, vv


def camera_directions(intr: Intrinsics, height: int, width: int, dtype=torch.float64) -> torch.Tensor:
    """K^-1 [u, v, 1] per pixel in camera space (z component 1), H×W×3."""
    uu, vv = pixel_grid(height, width, dtype)
    x = (uu - intr.cx) / intr.fx
    y = (vv - intr.cy) / intr.fy
    return torch.stack([x, y, torch.ones_like(x)], dim=-1)


def generate_rays(pose: CameraPose, intr: Intrinsics, res: Tuple[int, int], dtype=torch.float64) -> RayBundle:
    height, width = res
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"ray grid must be at least 1×1, got {height}×{width}")
    dirs_cam = camera_directions(intr, height, width, torch.float64)
    dirs = dirs_cam @ pose.rotation.T
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    origins = pose.translation.expand(height, width, 3)
    return RayBundle(origins.to(dtype), dirs.to(dtype))


def backproject(depth: torch.Tensor, pose: CameraPose, intr: Intrinsics,
                mask: Optional[torch.Tensor] = None, res: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """World points for every pixel with positive depth (and mask, if given), N×3.

    Each point is pose · (D(u,v) · K^-1 [u, v, 1]).
    """
    depth = torch.as_tensor(depth)
    if depth.ndim != 2:
        raise InvalidArgumentError(f"depth map must be H×W, got shape {tuple(depth.shape)}")
    if res is not None and tuple(res) != tuple(depth.shape):
        raise InvalidArgumentError(f"depth map shape {tuple(depth.shape)} does not match pixel grid {tuple(res)}")
    if not torch.isfinite(depth).all() or (depth < 0).any():
        raise InvalidArgumentError("depth map must be finite and nonnegative")
    keep = depth > 0
    if mask is not None:
        if mask.shape != depth.shape:
            raise InvalidArgumentError(f"mask shape {tuple(mask.shape)} does not match depth {tuple(depth.shape)}")
        keep = keep & mask.to(torch.bool)
    height, width = depth.shape
    dirs_cam = camera_directions(intr, height, width, torch.float64)
    pts_cam = dirs_cam[keep] * depth.to(torch.float64)[keep].unsqueeze(-1)
    pts = pts_cam @ pose.rotation.T + pose.translation
    return pts.to(depth.dtype if depth.dtype.is_floating_point else torch.float64)


def project(points: torch.Tensor, pose: CameraPose, intr: Intrinsics) -> Tuple[torch.Tensor, torch.Tensor]:
    """World points -> (normalized pixel coordinates N×2 as (u, v), camera depth N)."""
    pts = torch.as_tensor(points, dtype=torch.float64)
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    return torch.stack([u, v], dim=-1), z


def forward_cosines(rays: RayBundle, pose: CameraPose) -> torch.Tensor:
    """Camera-space z of each unit ray direction (converts ray distance to z-depth)."""
    axis = pose.rotation[:, 2].to(rays.directions.dtype)
    return rays.directions @ axis
