"""Fixed random-weight convolutional critic.

Provides multi-scale features for a perceptual distance and a pooled embedding
for an identity-style cosine similarity. Weights are drawn from a pinned seed
and never trained, so two processes with the same config agree exactly.
"""
from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import InvalidArgumentError


class RandomConvCritic(nn.Module):
    def __init__(self, channels: Sequence[int] = (16, 32, 64, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs, in_ch = [], 3
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (in_ch * 9)) ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)

    def features(self, image: torch.Tensor) -> List[torch.Tensor]:
        x = image * 2.0 - 1.0
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        return self.features(image)[-1].mean(dim=(2, 3))

    def perceptual(self, rec: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Mean over levels of the MSE between channel-normalized features."""
        _check_pair(rec, target)
        total = rec.new_zeros(())
        for fr, ft in zip(self.features(rec), self.features(target)):
            total = total + (_unit(fr) - _unit(ft)).square().mean()
        return total / len(self.convs)

    def identity(self, rec: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """1 - cosine(embed(rec), embed(target)), averaged over the batch."""
        _check_pair(rec, target)
        cos = F.cosine_similarity(self.embed(rec), self.embed(target), dim=1, eps=1e-8)
        return (1.0 - cos).mean()


def _unit(x: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return x / (x.square().sum(dim=1, keepdim=True) + eps).sqrt()


def _check_pair(rec: torch.Tensor, target: torch.Tensor) -> None:
    if rec.shape != target.shape:
        raise InvalidArgumentError(f"image shapes differ: {tuple(rec.shape)} vs {tuple(target.shape)}")


def build_critic(critic_cfg) -> RandomConvCritic:
    return RandomConvCritic(critic_cfg.channels, critic_cfg.seed)
