"""Torch networks: score models and the CSI autoencoder."""

from .base import SinusoidalTimeEmbedding, count_parameters
from .latent_net import LatentScoreNet
from .score_net import ScoreNet
from .vae import ChannelVAE

__all__ = [
    "SinusoidalTimeEmbedding",
    "count_parameters",
    "ScoreNet",
    "LatentScoreNet",
    "ChannelVAE",
]
