"""Pydantic schemas for experiment configs and result records."""

from pathlib import Path

from pydantic import Field, field_validator, model_validator

from .base import ChannelBaseModel, Method, PilotKind, StrictConfigModel
from .diffusion import SamplerConfig


RESULT_COLUMNS: tuple[str, ...] = (
    "experiment_id",
    "method",
    "scene_train",
    "scene_test",
    "snr_db",
    "n_pilots",
    "seed",
    "nmse_db_mean",
    "nmse_db_ci95",
    "n_test",
    "wall_seconds",
)

ITEM_COLUMNS: tuple[str, ...] = (
    "experiment_id",
    "method",
    "scene_train",
    "scene_test",
    "snr_db",
    "item_index",
    "nmse_linear",
    "aborted",
)


class ExperimentConfig(StrictConfigModel):
    """Train-on-X / test-on-Y evaluation over an SNR grid."""

    experiment_id: str = Field(default="experiment", min_length=1)
    train_scene: str = "urban-los"
    test_scenes: list[str] = Field(
        default_factory=lambda: ["urban-los", "urban-blocked", "indoor-rich", "mixed"],
        min_length=1,
    )
    snr_grid_db: list[float] = Field(
        default_factory=lambda: [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
        min_length=1,
    )
    n_pilots: int = Field(default=32, ge=1)
    pilot_kind: PilotKind = PilotKind.QPSK
    methods: list[Method] = Field(
        default_factory=lambda: [Method.DM, Method.LS, Method.LMMSE, Method.OMP],
        min_length=1,
    )
    n_test_channels: int = Field(default=500, ge=1)
    seed: int = 0
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)

    # Baseline knobs
    omp_oversampling: int = Field(default=2, ge=1)
    omp_max_atoms: int = Field(default=32, ge=0)
    lmmse_covariance: str = Field(default="sample", pattern="^(sample|identity)$")
    n_covariance_samples: int = Field(default=4000, ge=1)

    # Artifacts
    datasets_dir: Path | None = None
    checkpoint_path: Path | None = None
    results_dir: Path | None = None
    generate_missing_datasets: bool = True

    max_abort_fraction: float = Field(default=0.01, ge=0, le=1)
    record_wall_time: bool = False

    @field_validator("methods")
    @classmethod
    def dedupe_methods(cls, v: list[Method]) -> list[Method]:
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def validate_dm_checkpoint(self) -> "ExperimentConfig":
        if Method.DM in self.methods and self.checkpoint_path is None:
            raise ValueError("method 'dm' requires checkpoint_path")
        return self


class ResultRecord(ChannelBaseModel):
    """One (method, train scene, test scene, SNR) cell of the results table."""

    experiment_id: str
    method: str
    scene_train: str
    scene_test: str
    snr_db: float
    n_pilots: int
    seed: int
    nmse_db_mean: float
    nmse_db_ci95: float = Field(..., ge=0)
    n_test: int = Field(..., ge=1)
    wall_seconds: float = Field(default=0.0, ge=0)

    def to_row(self) -> list[str]:
        """CSV cells in RESULT_COLUMNS order."""
        values = self.model_dump()
        return [_format_cell(values[col]) for col in RESULT_COLUMNS]


def _format_cell(value: object) -> str:
    # repr keeps floats round-trippable and byte-stable across runs
    if isinstance(value, float):
        return repr(value)
    return str(value)
