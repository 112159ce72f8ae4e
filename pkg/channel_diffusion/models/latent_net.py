"""Dense residual score network over vectors (latents, toy problems)."""

import torch
from torch import nn
from torch.nn import functional as F

from ..schemas.diffusion import LatentNetConfig
from .base import time_mlp


class DenseBlock(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.norm = nn.LayerNorm(hidden)
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, hidden)

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        out = self.fc1(F.silu(self.norm(h))) + temb
        return h + self.fc2(F.silu(out))


class LatentScoreNet(nn.Module):
    """Raw score network for (B, dim) inputs with a time embedding."""

    def __init__(self, config: LatentNetConfig):
        super().__init__()
        self.config = config
        self.time_embed = time_mlp(config.time_embedding_dim, config.hidden)
        self.fc_in = nn.Linear(config.dim, config.hidden)
        self.blocks = nn.ModuleList(DenseBlock(config.hidden) for _ in range(config.n_blocks))
        self.fc_out = nn.Linear(config.hidden, config.dim)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None
    ) -> torch.Tensor:
        temb = self.time_embed(t)
        h = self.fc_in(x)
        for block in self.blocks:
            h = block(h, temb)
        return self.fc_out(F.silu(h))
