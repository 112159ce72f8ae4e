"""Shared building blocks for the score networks."""

import math

import torch
from torch import nn


class SinusoidalTimeEmbedding(nn.Module):
    """Sinusoidal features of the diffusion time t in [0, 1]."""

    def __init__(self, dim: int, max_period: float = 10_000.0, scale: float = 1_000.0):
        super().__init__()
        half = dim // 2
        freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
        self.register_buffer("freqs", freqs, persistent=False)
        self.scale = scale

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        args = self.scale * t.to(self.freqs.dtype)[:, None] * self.freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def time_mlp(embedding_dim: int, out_dim: int) -> nn.Sequential:
    """Embedding followed by a two-layer projection."""
    return nn.Sequential(
        SinusoidalTimeEmbedding(embedding_dim),
        nn.Linear(embedding_dim, out_dim),
        nn.SiLU(),
        nn.Linear(out_dim, out_dim),
    )


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
