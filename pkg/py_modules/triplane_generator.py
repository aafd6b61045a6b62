"""Miniature tri-plane generator.

mapping(z, c) -> w, a style-modulated synthesis network that grows a 4×4
constant into the tri-plane (one w⁺ row per layer), and a small rendering
decoder turning summed tri-plane features into color and density.

Layer plan for plane resolution R = 4·2^k (L = 2 + 2k layers):
    0            conv @ 4
    2i-1, 2i     upsample+conv, conv @ 4·2^i      (i = 1..k)
    L-1          1×1 to-plane conv producing 3·C channels @ R
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from camera_geometry import CameraPose, Intrinsics, canonical_pose, pose_label
from errors import InvalidArgumentError
from volume_rendering import RenderOutput, decode_and_render

LABEL_DIM = 25


@dataclass
class FeatureStack:
    tapped: torch.Tensor                                   # B×C_f×R_f×R_f
    activations: List[torch.Tensor] = field(default_factory=list)


def normalize_2nd_moment(x: torch.Tensor, dim: int = 1, eps: float = 1e-8) -> torch.Tensor:
    return x * (x.square().mean(dim=dim, keepdim=True) + eps).rsqrt()


def modulated_conv2d(x: torch.Tensor, weight: torch.Tensor, styles: torch.Tensor,
                     demodulate: bool = True, padding: int = 0) -> torch.Tensor:
    """Per-sample style-modulated convolution as one grouped conv.

    x: B×I×H×W, weight: O×I×k×k, styles: B×I.
    """
    batch, in_ch = x.shape[:2]
    out_ch, _, kh, kw = weight.shape
    w = weight.unsqueeze(0) * styles.reshape(batch, 1, in_ch, 1, 1)
    if demodulate:
        w = w * (w.square().sum(dim=[2, 3, 4], keepdim=True) + 1e-8).rsqrt()
    x = x.reshape(1, batch * in_ch, *x.shape[2:])
    out = F.conv2d(x, w.reshape(batch * out_ch, in_ch, kh, kw), padding=padding, groups=batch)
    return out.reshape(batch, out_ch, *out.shape[2:])


class MappingNetwork(nn.Module):
    def __init__(self, z_dim: int, w_dim: int, num_layers: int = 4, c_dim: int = LABEL_DIM):
        super().__init__()
        self.z_dim, self.w_dim, self.c_dim = z_dim, w_dim, c_dim
        self.embed = nn.Linear(c_dim, w_dim)
        layers, dim = [], z_dim + w_dim
        for _ in range(num_layers):
            layers += [nn.Linear(dim, w_dim), nn.LeakyReLU(0.2)]
            dim = w_dim
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.z_dim or c.shape[-1] != self.c_dim:
            raise InvalidArgumentError(
                f"mapping expects z of length {self.z_dim} and label of length {self.c_dim}, "
                f"got {z.shape[-1]} and {c.shape[-1]}")
        x = normalize_2nd_moment(z)
        y = normalize_2nd_moment(self.embed(c.to(z.dtype)))
        return self.net(torch.cat([x, y], dim=1))


class StyleLayer(nn.Module):
    def __init__(self, w_dim: int, in_ch: int, out_ch: int, kernel: int = 3,
                 upsample: bool = False, demodulate: bool = True, activate: bool = True):
        super().__init__()
        self.affine = nn.Linear(w_dim, in_ch)
        nn.init.ones_(self.affine.bias)
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.upsample, self.demodulate, self.activate = upsample, demodulate, activate
        self.padding = kernel // 2
        self.gain = 1.0 if demodulate else 1.0 / np.sqrt(in_ch * kernel * kernel)

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        styles = self.affine(w) * self.gain
        x = modulated_conv2d(x, self.weight, styles, self.demodulate, self.padding)
        x = x + self.bias.reshape(1, -1, 1, 1)
        return F.leaky_relu(x, 0.2) if self.activate else x


class TriplaneSynthesis(nn.Module):
    def __init__(self, w_dim: int, channels: int, plane_channels: int, num_upsamples: int):
        super().__init__()
        self.plane_channels = plane_channels
        self.const = nn.Parameter(torch.randn(channels, 4, 4))
        layers = [StyleLayer(w_dim, channels, channels)]
        for _ in range(num_upsamples):
            layers.append(StyleLayer(w_dim, channels, channels, upsample=True))
            layers.append(StyleLayer(w_dim, channels, channels))
        layers.append(StyleLayer(w_dim, channels, 3 * plane_channels, kernel=1, demodulate=False, activate=False))
        self.layers = nn.ModuleList(layers)

    @property
    def num_ws(self) -> int:
        return len(self.layers)

    def run(self, x: torch.Tensor, wp: torch.Tensor, start: int, stop: int, keep: List[torch.Tensor] = None):
        for idx in range(start, stop):
            x = self.layers[idx](x, wp[:, idx])
            if keep is not None:
                keep.append(x)
        return x

    def to_planes(self, x: torch.Tensor) -> torch.Tensor:
        b, _, r, _ = x.shape
        return x.reshape(b, 3, self.plane_channels, r, r)


class RenderingDecoder(nn.Module):
    """Summed tri-plane features -> (color in [0,1] via sigmoid, density >= 0 via softplus)."""

    def __init__(self, in_features: int, hidden: int = 64, density_bias: float = -4.0):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_features, hidden), nn.Softplus(), nn.Linear(hidden, 4))
        with torch.no_grad():
            self.net[-1].bias[0] = density_bias

    def forward(self, feats: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        out = self.net(feats)
        return torch.sigmoid(out[..., 1:]), F.softplus(out[..., 0])


class TriplaneGenerator(nn.Module):
    def __init__(self, gen_cfg):
        super().__init__()
        self.cfg = gen_cfg
        self.mapping = MappingNetwork(gen_cfg.z_dim, gen_cfg.w_dim, gen_cfg.mapping_layers)
        self.synthesis = TriplaneSynthesis(gen_cfg.w_dim, gen_cfg.channels, gen_cfg.plane_channels,
                                           gen_cfg.num_upsamples)
        self.decoder = RenderingDecoder(gen_cfg.plane_channels, gen_cfg.decoder_hidden, gen_cfg.density_bias)
        self.tap_index = gen_cfg.tap_index
        self.register_buffer("w_avg", torch.zeros(gen_cfg.w_dim))

    @property
    def num_ws(self) -> int:
        return self.synthesis.num_ws

    @property
    def w_dim(self) -> int:
        return self.cfg.w_dim

    def tapped_shape(self) -> Tuple[int, int, int]:
        res = self.cfg.tap_resolution
        return self.cfg.channels, res, res

    def map_latent(self, z: torch.Tensor, pose_cond: torch.Tensor) -> torch.Tensor:
        """w = mapping(z, c); z: B×d_z (or d_z), pose_cond: B×25 (or 25)."""
        single = z.ndim == 1
        z = z.reshape(-1, z.shape[-1])
        c = pose_cond.reshape(-1, pose_cond.shape[-1]).to(z.device, z.dtype)
        if c.shape[0] == 1 and z.shape[0] > 1:
            c = c.expand(z.shape[0], -1)
        w = self.mapping(z, c)
        return w[0] if single else w

    def canonical_label(self, camera_cfg, dtype=torch.float32) -> torch.Tensor:
        intr = Intrinsics(camera_cfg.fx, camera_cfg.fy, camera_cfg.cx, camera_cfg.cy)
        return pose_label(canonical_pose(camera_cfg.distance), intr).to(dtype)

    def _check_wplus(self, wp: torch.Tensor) -> torch.Tensor:
        if wp.ndim == 2:
            wp = wp.unsqueeze(0)
        if wp.ndim != 3 or wp.shape[1] != self.num_ws or wp.shape[2] != self.w_dim:
            raise InvalidArgumentError(
                f"w⁺ must be B×{self.num_ws}×{self.w_dim}, got {tuple(wp.shape)}")
        return wp

    def generator_forward(self, wp: torch.Tensor, keep_activations: bool = False):
        """w⁺ (B×L×d_w) -> (FeatureStack, tri-plane B×3×C×R×R)."""
        wp = self._check_wplus(wp)
        keep = [] if keep_activations else None
        x = self.synthesis.const.unsqueeze(0).expand(wp.shape[0], -1, -1, -1).to(wp.dtype)
        tapped = self.synthesis.run(x, wp, 0, self.tap_index + 1, keep)
        planes = self.resume_forward(tapped, wp, keep)
        return FeatureStack(tapped, keep or []), planes

    def resume_forward(self, fstar: torch.Tensor, wp: torch.Tensor, keep: List[torch.Tensor] = None) -> torch.Tensor:
        """Continue synthesis after the tap layer using w⁺ rows tap+1..L-1."""
        wp = self._check_wplus(wp)
        expected = (wp.shape[0],) + self.tapped_shape()
        if tuple(fstar.shape) != expected:
            raise InvalidArgumentError(f"tapped feature map must be {expected}, got {tuple(fstar.shape)}")
        x = self.synthesis.run(fstar, wp, self.tap_index + 1, self.num_ws, keep)
        return self.synthesis.to_planes(x)

    def synthesize_from_w(self, w: torch.Tensor):
        """Single-w synthesis: every layer receives the same code."""
        return self.generator_forward(w.unsqueeze(1).repeat(1, self.num_ws, 1))

    def render(self, planes: torch.Tensor, poses: Union[CameraPose, Sequence[CameraPose]], intr: Intrinsics,
               res: Tuple[int, int], render_cfg, generator: torch.Generator = None) -> RenderOutput:
        return decode_and_render(self.decoder, planes, poses, intr, res, render_cfg, generator)
