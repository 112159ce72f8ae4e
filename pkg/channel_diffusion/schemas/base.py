"""Base schemas and common types for channel_diffusion."""

from enum import Enum

from pydantic import BaseModel, ConfigDict


# =============================================================================
# ENUMS
# =============================================================================


class SDEKind(str, Enum):
    """Forward noising process family."""

    VE = "VE"
    VP = "VP"


class PilotKind(str, Enum):
    """Pilot matrix construction."""

    QPSK = "qpsk"
    GAUSSIAN = "gaussian"


class Method(str, Enum):
    """Channel estimation methods compared by the experiment runner."""

    DM = "dm"
    LS = "ls"
    LMMSE = "lmmse"
    OMP = "omp"


class CheckpointKind(str, Enum):
    """What a checkpoint file holds."""

    SCORE = "score"
    LATENT_SCORE = "latent_score"
    VAE = "vae"


# =============================================================================
# BASE SCHEMAS
# =============================================================================


class ChannelBaseModel(BaseModel):
    """Shared base: field aliases accepted and assignments re-validated."""

    model_config = ConfigDict(
        populate_by_name=True,
        validate_assignment=True,
    )


class StrictConfigModel(ChannelBaseModel):
    """Config loaded from user JSON: unknown keys are an error."""

    model_config = ConfigDict(
        populate_by_name=True,
        validate_assignment=True,
        extra="forbid",
    )
