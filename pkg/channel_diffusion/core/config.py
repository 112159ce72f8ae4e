"""Runtime settings read from CHANNEL_DIFFUSION_* environment variables."""

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="CHANNEL_DIFFUSION_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Artifact locations
    data_dir: Path = Path("artifacts/datasets")
    checkpoint_dir: Path = Path("artifacts/checkpoints")
    results_dir: Path = Path("artifacts/results")

    # Compute
    device: Literal["cpu", "cuda"] = "cpu"
    torch_threads: int = Field(default=4, ge=1, le=256)
    deterministic_algorithms: bool = True

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    show_progress: bool = True  # tqdm bars for training/sampling loops

    def checkpoint_path(self, name: str) -> Path:
        """Resolve a checkpoint file name under the checkpoint directory."""
        path = Path(name)
        if path.is_absolute() or path.parent != Path("."):
            return path
        return self.checkpoint_dir / path


@lru_cache
def get_settings() -> Settings:
    """Return the process-wide settings, built once."""
    return Settings()


def configure_torch(settings: Settings | None = None) -> None:
    """Apply thread count and determinism settings to torch."""
    import torch

    settings = settings or get_settings()
    torch.set_num_threads(settings.torch_threads)
    torch.use_deterministic_algorithms(settings.deterministic_algorithms, warn_only=True)
