"""Attention building blocks shared by the encoder and the feature-alignment module."""
import math
from typing import Tuple

import torch
import torch.nn as nn
from einops import rearrange

from errors import InvalidArgumentError


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """softmax(q kᵀ / √d) v over the last two dims; returns (output, weights)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise InvalidArgumentError(
            f"attention shapes disagree: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class CrossAttention(nn.Module):
    """Multi-head attention with separate query and key/value token sets."""

    def __init__(self, query_dim: int, context_dim: int, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise InvalidArgumentError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.to_q = nn.Linear(query_dim, dim, bias=False)
        self.to_k = nn.Linear(context_dim, dim, bias=False)
        self.to_v = nn.Linear(context_dim, dim, bias=False)

    def forward(self, queries: torch.Tensor, context: torch.Tensor, return_weights: bool = False,
                key_context: torch.Tensor = None):
        """key_context (default: context) feeds the keys, context the values."""
        keys = context if key_context is None else key_context
        q = rearrange(self.to_q(queries), "b n (h d) -> b h n d", h=self.heads)
        k = rearrange(self.to_k(keys), "b m (h d) -> b h m d", h=self.heads)
        v = rearrange(self.to_v(context), "b m (h d) -> b h m d", h=self.heads)
        out, weights = scaled_dot_attention(q, k, v)
        out = rearrange(out, "b h n d -> b n (h d)")
        return (out, weights) if return_weights else out


class WindowSelfAttention(nn.Module):
    """Pre-norm self-attention inside non-overlapping windows, plus an MLP, both residual."""

    def __init__(self, channels: int, window_size: int = 4, heads: int = 1):
        super().__init__()
        self.window_size = window_size
        self.norm1 = nn.LayerNorm(channels)
        self.attn = CrossAttention(channels, channels, channels, heads)
        self.proj = nn.Linear(channels, channels)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(nn.Linear(channels, 2 * channels), nn.GELU(), nn.Linear(2 * channels, channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, _, h, w = x.shape
        ws = min(self.window_size, h, w)
        if h % ws or w % ws:
            raise InvalidArgumentError(f"feature map {h}×{w} is not divisible into {ws}×{ws} windows")
        tokens = rearrange(x, "b c (nh wh) (nw ww) -> (b nh nw) (wh ww) c", wh=ws, ww=ws)
        normed = self.norm1(tokens)
        tokens = tokens + self.proj(self.attn(normed, normed))
        tokens = tokens + self.mlp(self.norm2(tokens))
        return rearrange(tokens, "(b nh nw) (wh ww) c -> b c (nh wh) (nw ww)",
                         nh=h // ws, nw=w // ws, wh=ws, ww=ws)
