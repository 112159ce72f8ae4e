"""Shared fixtures: quiet settings, small scenes and small networks."""

import numpy as np
import pytest

from channel_diffusion.core.config import get_settings
from channel_diffusion.schemas.channels import DatasetMeta, SceneConfig, UPAGeometry
from channel_diffusion.schemas.diffusion import SDEConfig, ScoreNetConfig, TrainConfig
from channel_diffusion.services.channel_data import ChannelDataset


@pytest.fixture(autouse=True)
def quiet_settings(monkeypatch, tmp_path):
    """No progress bars; artifacts go to the test's tmp dir."""
    monkeypatch.setenv("CHANNEL_DIFFUSION_SHOW_PROGRESS", "false")
    monkeypatch.setenv("CHANNEL_DIFFUSION_TORCH_THREADS", "1")
    monkeypatch.setenv("CHANNEL_DIFFUSION_CHECKPOINT_DIR", str(tmp_path / "checkpoints"))
    monkeypatch.setenv("CHANNEL_DIFFUSION_DATA_DIR", str(tmp_path / "datasets"))
    monkeypatch.setenv("CHANNEL_DIFFUSION_RESULTS_DIR", str(tmp_path / "results"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def small_scene() -> SceneConfig:
    """2x2 receive and 2x4 transmit arrays."""
    return SceneConfig(
        name="small",
        n_clusters_range=(2, 3),
        rx_geometry=UPAGeometry(rows=2, cols=2),
        tx_geometry=UPAGeometry(rows=2, cols=4),
    )


@pytest.fixture
def ve_sde() -> SDEConfig:
    return SDEConfig(kind="VE", sigma_min=0.01, sigma_max=50.0, n_discretization=100)


@pytest.fixture
def tiny_net() -> ScoreNetConfig:
    return ScoreNetConfig(features=8, groups=2, n_blocks=1, time_embedding_dim=8)


@pytest.fixture
def short_train() -> TrainConfig:
    return TrainConfig(steps=3, batch_size=4, learning_rate=1e-3, log_every=1)


def make_dataset(samples: np.ndarray, scene: str = "synthetic") -> ChannelDataset:
    """Wrap a complex (n, Nr, Nt) array as a dataset."""
    n, n_rx, n_tx = samples.shape
    meta = DatasetMeta(
        n_samples=n,
        n_rx=n_rx,
        n_tx=n_tx,
        scene=scene,
        carrier_ghz=28.0,
        normalization_scale=1.0,
    )
    return ChannelDataset(samples=samples, meta=meta)


def complex_gaussian(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
