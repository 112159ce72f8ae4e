"""Pydantic schemas for array geometry, scenes and dataset metadata."""

from typing import Any

from pydantic import Field, field_validator, model_validator

from .base import ChannelBaseModel, StrictConfigModel


DATASET_FORMAT_VERSION = "1"


# =============================================================================
# ARRAY GEOMETRY
# =============================================================================


class UPAGeometry(StrictConfigModel):
    """Uniform planar array with half-wavelength spacing."""

    rows: int = Field(..., ge=1, description="Vertical element count")
    cols: int = Field(..., ge=1, description="Horizontal element count")
    spacing_wavelengths: float = Field(default=0.5)

    @field_validator("spacing_wavelengths")
    @classmethod
    def validate_spacing(cls, v: float) -> float:
        if v != 0.5:
            raise ValueError("only half-wavelength spacing (0.5) is supported")
        return v

    @property
    def n_antennas(self) -> int:
        return self.rows * self.cols


# =============================================================================
# SCENES
# =============================================================================


class SceneConfig(StrictConfigModel):
    """Clustered geometric multipath scene."""

    name: str = Field(..., min_length=1)
    carrier_ghz: float = Field(default=28.0, gt=0)
    n_clusters_range: tuple[int, int] = Field(default=(3, 6))
    rays_per_cluster: int = Field(default=4, ge=1)
    angle_spread_deg: float = Field(default=5.0, ge=0)
    los_power_fraction: float = Field(default=0.0, ge=0, le=1)
    azimuth_range_deg: tuple[float, float] = Field(default=(-60.0, 60.0))
    elevation_range_deg: tuple[float, float] = Field(default=(60.0, 120.0))
    rx_geometry: UPAGeometry = Field(
        default_factory=lambda: UPAGeometry(rows=4, cols=4)
    )
    tx_geometry: UPAGeometry = Field(
        default_factory=lambda: UPAGeometry(rows=8, cols=8)
    )

    @model_validator(mode="after")
    def validate_ranges(self) -> "SceneConfig":
        lmin, lmax = self.n_clusters_range
        if lmin < 1 or lmax < lmin:
            raise ValueError(f"invalid n_clusters_range {self.n_clusters_range}")
        for name in ("azimuth_range_deg", "elevation_range_deg"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"invalid {name} ({lo}, {hi})")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rx_geometry.n_antennas, self.tx_geometry.n_antennas)


MIXED_SCENE = "mixed"

SCENE_PRESETS: dict[str, SceneConfig] = {
    "urban-los": SceneConfig(
        name="urban-los",
        n_clusters_range=(3, 6),
        angle_spread_deg=5.0,
        los_power_fraction=0.6,
    ),
    "urban-blocked": SceneConfig(
        name="urban-blocked",
        n_clusters_range=(3, 6),
        angle_spread_deg=5.0,
        los_power_fraction=0.0,
    ),
    "indoor-rich": SceneConfig(
        name="indoor-rich",
        n_clusters_range=(8, 12),
        angle_spread_deg=15.0,
        los_power_fraction=0.0,
        azimuth_range_deg=(-90.0, 90.0),
        elevation_range_deg=(45.0, 135.0),
    ),
}


def get_scene(name: str) -> SceneConfig:
    """Look up a scene preset by name."""
    try:
        return SCENE_PRESETS[name]
    except KeyError:
        known = ", ".join(sorted([*SCENE_PRESETS, MIXED_SCENE]))
        raise ValueError(f"Unknown scene '{name}' (known: {known})") from None


# =============================================================================
# DATASET METADATA
# =============================================================================


class DatasetMeta(ChannelBaseModel):
    """Contents of a dataset container's meta.json."""

    version: str = DATASET_FORMAT_VERSION
    n_samples: int = Field(..., ge=1)
    n_rx: int = Field(..., ge=1)
    n_tx: int = Field(..., ge=1)
    scene: str
    carrier_ghz: float
    normalization_scale: float = Field(..., gt=0)
    seed: int | None = None
    generator: dict[str, Any] = Field(default_factory=dict)
    provenance: list[tuple[int, int]] | None = Field(
        default=None,
        description="(part index, sample index) per sample for mixtures",
    )
