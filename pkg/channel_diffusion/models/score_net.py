"""Convolutional residual score network over channel planes."""

import torch
from torch import nn
from torch.nn import functional as F

from ..schemas.diffusion import ScoreNetConfig
from .base import time_mlp

# time-embedding width relative to the feature maps
TIME_WIDTH_MULTIPLIER = 4


class ResidualBlock(nn.Module):
    """GroupNorm-SiLU-Conv twice, with the time embedding added in between."""

    def __init__(self, features: int, groups: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, features)
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, features)
        self.norm2 = nn.GroupNorm(groups, features)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        out = self.conv1(F.silu(self.norm1(h)))
        out = out + self.time_proj(temb)[:, :, None, None]
        out = self.conv2(F.silu(self.norm2(out)))
        return h + out


class ScoreNet(nn.Module):
    """
    Raw score network n(x, t[, c]).

    Condition planes are concatenated to the input. A network built with
    cond_channels > 0 called without a condition sees all-zero condition
    planes, which is exactly the null condition.
    """

    def __init__(self, config: ScoreNetConfig):
        super().__init__()
        self.config = config
        in_channels = config.data_channels + config.cond_channels
        time_width = TIME_WIDTH_MULTIPLIER * config.features
        self.time_embed = time_mlp(config.time_embedding_dim, time_width)
        self.conv_in = nn.Conv2d(in_channels, config.features, 3, padding=1)
        self.blocks = nn.ModuleList(
            ResidualBlock(config.features, config.groups, time_width)
            for _ in range(config.n_blocks)
        )
        self.norm_out = nn.GroupNorm(config.groups, config.features)
        self.conv_out = nn.Conv2d(config.features, config.data_channels, 3, padding=1)

    def forward(
        self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None
    ) -> torch.Tensor:
        if self.config.cond_channels:
            if cond is None:
                cond = x.new_zeros(
                    (x.shape[0], self.config.cond_channels, *x.shape[2:])
                )
            x = torch.cat([x, cond.to(x.dtype)], dim=1)
        temb = self.time_embed(t)
        h = self.conv_in(x)
        for block in self.blocks:
            h = block(h, temb)
        return self.conv_out(F.silu(self.norm_out(h)))
