"""Image -> w⁺ encoder.

A four-level convolutional pyramid (optionally with windowed self-attention per
level) feeds one cross-attention head per row group: the coarsest ("query")
level supplies the queries and w0, the coarse/mid/fine levels supply keys and
values. Rows are assembled around w_avg and unlocked progressively.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import torch
import torch.nn as nn

from attention import CrossAttention, WindowSelfAttention
from config import STAGES
from errors import InvalidArgumentError


@dataclass
class PyramidFeatures:
    query: torch.Tensor     # B×C×(H/16)²
    coarse: torch.Tensor    # B×C×(H/8)²
    mid: torch.Tensor       # B×C×(H/4)²
    fine: torch.Tensor      # B×C×(H/2)²


class StageSchedule:
    def __init__(self, thresholds: Mapping[str, int]):
        missing = [s for s in STAGES if s not in thresholds]
        if missing or set(thresholds) - set(STAGES):
            raise InvalidArgumentError(f"stage thresholds must name exactly {list(STAGES)}, got {sorted(thresholds)}")
        values = [int(thresholds[s]) for s in STAGES]
        if any(b < a for a, b in zip(values, values[1:])):
            raise InvalidArgumentError(f"stage thresholds must be nondecreasing, got {values}")
        self.thresholds = dict(zip(STAGES, values))

    def active_stage(self, iteration: int) -> str:
        active = STAGES[0]
        for stage in STAGES:
            if iteration >= self.thresholds[stage]:
                active = stage
        return active


def stage_rank(stage: str) -> int:
    if stage not in STAGES:
        raise InvalidArgumentError(f"unknown stage '{stage}', expected one of {list(STAGES)}")
    return STAGES.index(stage)


def default_row_groups(num_ws: int) -> Dict[str, List[int]]:
    """Split rows 1..L-1 into coarse/mid/fine thirds, fine taking the remainder (L=8: 1-2, 3-4, 5-7)."""
    n = num_ws - 1
    if n < 3:
        raise InvalidArgumentError(f"need at least 4 w⁺ rows for three row groups, got {num_ws}")
    third = n // 3
    return {"coarse": list(range(1, 1 + third)),
            "mid": list(range(1 + third, 1 + 2 * third)),
            "fine": list(range(1 + 2 * third, num_ws))}


def validate_row_groups(row_groups: Mapping[str, Sequence[int]], num_ws: int) -> Dict[str, List[int]]:
    if set(row_groups) != set(STAGES):
        raise InvalidArgumentError(f"row groups must name exactly {list(STAGES)}, got {sorted(row_groups)}")
    rows = sorted(r for s in STAGES for r in row_groups[s])
    if rows != list(range(1, num_ws)):
        raise InvalidArgumentError(f"row groups must partition rows 1..{num_ws - 1} exactly once, got {rows}")
    return {s: [int(r) for r in row_groups[s]] for s in STAGES}


def assemble_wplus(w0: torch.Tensor, deltas: Mapping[str, torch.Tensor], w_avg: torch.Tensor,
                   row_groups: Mapping[str, Sequence[int]], active_stage: str, num_ws: int) -> torch.Tensor:
    """row_i = w_avg + w0 (+ group delta for rows of stages up to active_stage); row 0 has no delta.

    w0: B×d_w, deltas[stage]: B×len(rows)×d_w. Returns B×L×d_w.
    """
    groups = validate_row_groups(row_groups, num_ws)
    limit = stage_rank(active_stage)
    base = w_avg.to(w0.dtype) + w0
    rows = [base] * num_ws
    for stage in STAGES[:limit + 1]:
        delta = deltas[stage]
        if delta.shape[1] != len(groups[stage]):
            raise InvalidArgumentError(
                f"{stage} delta has {delta.shape[1]} rows, group owns {len(groups[stage])}")
        for j, row in enumerate(groups[stage]):
            rows[row] = base + delta[:, j]
    return torch.stack(rows, dim=1)


def wplus_delta_norm(wp: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of ‖(row_i - row_0)_{i≥1}‖₂."""
    delta = wp[:, 1:] - wp[:, :1]
    return delta.flatten(1).norm(dim=1).mean()


def _level(in_ch: int, out_ch: int, window: Optional[WindowSelfAttention]) -> nn.Module:
    layers = [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
              nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.LeakyReLU(0.2)]
    if window is not None:
        layers.append(window)
    return nn.Sequential(*layers)


class GroupHead(nn.Module):
    def __init__(self, rows: int, w_dim: int, query_ch: int, level_ch: int, heads: int):
        super().__init__()
        self.tokens = nn.Parameter(torch.randn(rows, w_dim) * 0.02)
        self.query_proj = nn.Linear(query_ch, w_dim)
        self.attn = CrossAttention(w_dim, level_ch, w_dim, heads)
        self.out = nn.Linear(w_dim, w_dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, pooled_query: torch.Tensor, level: torch.Tensor) -> torch.Tensor:
        queries = self.tokens.unsqueeze(0) + self.query_proj(pooled_query).unsqueeze(1)
        context = level.flatten(2).transpose(1, 2)
        return self.out(self.attn(queries, context))


class GeometryEncoder(nn.Module):
    def __init__(self, enc_cfg, num_ws: int, w_dim: int, resolution: int):
        super().__init__()
        if resolution % 16:
            raise InvalidArgumentError(f"encoder input resolution must be a multiple of 16, got {resolution}")
        self.resolution, self.num_ws, self.w_dim = resolution, num_ws, w_dim
        self.row_groups = validate_row_groups(enc_cfg.row_groups or default_row_groups(num_ws), num_ws)
        c_fine, c_mid, c_coarse, c_query = enc_cfg.channels

        def window(ch):
            return WindowSelfAttention(ch, enc_cfg.window_size, enc_cfg.attention_heads) if enc_cfg.window_attention else None

        self.fine = _level(3, c_fine, window(c_fine))
        self.mid = _level(c_fine, c_mid, window(c_mid))
        self.coarse = _level(c_mid, c_coarse, window(c_coarse))
        self.query = _level(c_coarse, c_query, None)
        level_ch = {"coarse": c_coarse, "mid": c_mid, "fine": c_fine}
        self.heads = nn.ModuleDict({
            s: GroupHead(len(self.row_groups[s]), w_dim, c_query, level_ch[s], enc_cfg.attention_heads)
            for s in STAGES})
        self.w0_head = nn.Linear(c_query, w_dim)
        nn.init.zeros_(self.w0_head.weight)
        nn.init.zeros_(self.w0_head.bias)
        self.register_buffer("w_avg", torch.zeros(w_dim))

    def backbone_pyramid(self, image: torch.Tensor) -> PyramidFeatures:
        if image.ndim != 4 or image.shape[1] != 3 or tuple(image.shape[2:]) != (self.resolution, self.resolution):
            raise InvalidArgumentError(
                f"encoder expects B×3×{self.resolution}×{self.resolution} images, got {tuple(image.shape)}")
        fine = self.fine(image * 2.0 - 1.0)
        mid = self.mid(fine)
        coarse = self.coarse(mid)
        return PyramidFeatures(self.query(coarse), coarse, mid, fine)

    def encode_parts(self, image: torch.Tensor):
        """(w0 B×d_w, {stage: B×rows×d_w})"""
        pyr = self.backbone_pyramid(image)
        pooled = pyr.query.mean(dim=(2, 3))
        deltas = {s: self.heads[s](pooled, getattr(pyr, s)) for s in STAGES}
        return self.w0_head(pooled), deltas

    def forward(self, image: torch.Tensor, active_stage: str = "fine") -> torch.Tensor:
        w0, deltas = self.encode_parts(image)
        return assemble_wplus(w0, deltas, self.w_avg, self.row_groups, active_stage, self.num_ws)

    encode = forward


def build_encoder(cfg) -> GeometryEncoder:
    return GeometryEncoder(cfg.encoder, cfg.generator.num_ws, cfg.generator.w_dim, cfg.camera.resolution)
