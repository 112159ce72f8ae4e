"""Pydantic schemas for channel_diffusion configs and records."""

from .base import (
    ChannelBaseModel,
    CheckpointKind,
    Method,
    PilotKind,
    SDEKind,
    StrictConfigModel,
)
from .channels import (
    DATASET_FORMAT_VERSION,
    MIXED_SCENE,
    SCENE_PRESETS,
    DatasetMeta,
    SceneConfig,
    UPAGeometry,
    get_scene,
)
from .diffusion import (
    LatentNetConfig,
    SamplerConfig,
    ScoreNetConfig,
    SDEConfig,
    TrainConfig,
    TrainingJobConfig,
    VAEConfig,
)
from .experiments import (
    ITEM_COLUMNS,
    RESULT_COLUMNS,
    ExperimentConfig,
    ResultRecord,
)
from .feedback import FeedbackConfig

__all__ = [
    # Base
    "ChannelBaseModel",
    "StrictConfigModel",
    "SDEKind",
    "PilotKind",
    "Method",
    "CheckpointKind",
    # Channels
    "UPAGeometry",
    "SceneConfig",
    "DatasetMeta",
    "SCENE_PRESETS",
    "MIXED_SCENE",
    "DATASET_FORMAT_VERSION",
    "get_scene",
    # Diffusion
    "SDEConfig",
    "ScoreNetConfig",
    "LatentNetConfig",
    "VAEConfig",
    "TrainConfig",
    "SamplerConfig",
    "TrainingJobConfig",
    # Feedback
    "FeedbackConfig",
    # Experiments
    "ExperimentConfig",
    "ResultRecord",
    "RESULT_COLUMNS",
    "ITEM_COLUMNS",
]
