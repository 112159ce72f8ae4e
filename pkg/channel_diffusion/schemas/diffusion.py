"""Pydantic schemas for noise schedules, training and sampling."""

from pydantic import Field, model_validator

from .base import SDEKind, StrictConfigModel


# =============================================================================
# NOISE SCHEDULE
# =============================================================================


class SDEConfig(StrictConfigModel):
    """Forward SDE and its discretization."""

    kind: SDEKind = SDEKind.VE
    sigma_min: float = Field(default=0.01, gt=0)
    sigma_max: float = Field(default=50.0, gt=0)
    beta_min: float = Field(default=0.1, gt=0)
    beta_max: float = Field(default=20.0, gt=0)
    n_discretization: int = Field(default=500, ge=2)

    @model_validator(mode="after")
    def validate_ordering(self) -> "SDEConfig":
        if not self.sigma_min < self.sigma_max:
            raise ValueError("sigma_min must be smaller than sigma_max")
        if not self.beta_min < self.beta_max:
            raise ValueError("beta_min must be smaller than beta_max")
        return self


# =============================================================================
# NETWORKS
# =============================================================================


class ScoreNetConfig(StrictConfigModel):
    """Convolutional residual score network over (C, Nr, Nt) planes."""

    data_channels: int = Field(default=2, ge=1)
    cond_channels: int = Field(default=0, ge=0)
    features: int = Field(default=64, ge=8)
    n_blocks: int = Field(default=6, ge=1)
    groups: int = Field(default=8, ge=1)
    time_embedding_dim: int = Field(default=128, ge=4)

    @model_validator(mode="after")
    def validate_groups(self) -> "ScoreNetConfig":
        if self.features % self.groups:
            raise ValueError("features must be divisible by groups")
        if self.time_embedding_dim % 2:
            raise ValueError("time_embedding_dim must be even")
        return self


class LatentNetConfig(StrictConfigModel):
    """Dense residual score network over vectors."""

    dim: int = Field(..., ge=1)
    hidden: int = Field(default=256, ge=8)
    n_blocks: int = Field(default=3, ge=1)
    time_embedding_dim: int = Field(default=64, ge=4)


class VAEConfig(StrictConfigModel):
    """Dense VAE over flattened (2, Nr, Nt) channels."""

    n_rx: int = Field(..., ge=1)
    n_tx: int = Field(..., ge=1)
    latent_dim: int = Field(default=64, ge=1)
    hidden: tuple[int, ...] = (512, 256)
    beta: float = Field(default=1e-3, ge=0)


# =============================================================================
# TRAINING
# =============================================================================


class TrainConfig(StrictConfigModel):
    """Optimizer loop settings."""

    steps: int = Field(default=20_000, ge=1)
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=2e-4, gt=0)
    ema_decay: float = Field(default=0.999, ge=0, lt=1)
    grad_clip: float | None = Field(default=1.0, gt=0)
    seed: int = 0
    log_every: int = Field(default=500, ge=1)


# =============================================================================
# SAMPLING
# =============================================================================


class SamplerConfig(StrictConfigModel):
    """Predictor-corrector sampler knobs."""

    n_predictor_steps: int = Field(default=200, ge=1)
    n_corrector_steps_per: int = Field(default=1, ge=0)
    corrector_snr: float = Field(default=0.16, ge=0)
    guidance_scale: float = Field(default=1.0)
    likelihood_inflation: float = Field(default=1.0, ge=0)
    cfg_weight: float = Field(default=0.0)
    n_samples: int = Field(default=8, ge=1)


# =============================================================================
# TRAINING JOBS
# =============================================================================


class TrainingJobConfig(StrictConfigModel):
    """JSON config for the train / train-cond / train-vae commands."""

    sde: SDEConfig = Field(default_factory=SDEConfig)
    network: ScoreNetConfig = Field(default_factory=ScoreNetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    p_drop: float = Field(default=0.1, ge=0, le=1)

    # VAE and latent denoiser
    latent_dim: int = Field(default=64, ge=1)
    vae_beta: float = Field(default=1e-3, ge=0)
    vae_hidden: tuple[int, ...] = (512, 256)
    latent_network: LatentNetConfig | None = None
    latent_train: TrainConfig | None = None
