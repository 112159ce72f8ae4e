"""Dense variational autoencoder for CSI compression."""

import torch
from torch import nn

from ..schemas.diffusion import VAEConfig


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(n_in, n_out))
        if i < len(sizes) - 2:
            layers.append(nn.SiLU())
    return nn.Sequential(*layers)


class ChannelVAE(nn.Module):
    """Encoder (2, Nr, Nt) -> (mu, logvar) in R^d; decoder R^d -> (2, Nr, Nt)."""

    def __init__(self, config: VAEConfig):
        super().__init__()
        self.config = config
        flat = 2 * config.n_rx * config.n_tx
        hidden = list(config.hidden)
        self.encoder = _mlp([flat, *hidden, 2 * config.latent_dim])
        self.decoder = _mlp([config.latent_dim, *reversed(hidden), flat])

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        stats = self.encoder(x.flatten(start_dim=1))
        mu, logvar = stats.chunk(2, dim=-1)
        return mu, logvar.clamp(-30.0, 20.0)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        out = self.decoder(z)
        return out.view(z.shape[0], 2, self.config.n_rx, self.config.n_tx)

    def forward(
        self, x: torch.Tensor, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mu, logvar = self.encode(x)
        eps = torch.randn(mu.shape, generator=generator, device=mu.device, dtype=mu.dtype)
        z = mu + torch.exp(0.5 * logvar) * eps
        return self.decode(z), mu, logvar
