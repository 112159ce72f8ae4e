"""Pydantic schemas for the CSI feedback link."""

import math

from pydantic import Field

from .base import StrictConfigModel
from .diffusion import SamplerConfig


class FeedbackConfig(StrictConfigModel):
    """Quantizer, link noise and latent denoiser switches."""

    bits_per_dim: int = Field(default=0, ge=0, le=16, description="0 = unquantized")
    feedback_snr_db: float = Field(default=math.inf)
    clip_multiple: float = Field(default=4.0, gt=0)
    latent_denoise_enabled: bool = False
    sampler: SamplerConfig = Field(
        default_factory=lambda: SamplerConfig(n_predictor_steps=100)
    )
