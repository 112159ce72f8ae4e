"""
Channel Data: synthetic multi-scene MIMO channel datasets.

Channels are drawn from a clustered geometric multipath model over uniform
planar arrays, normalized with one dataset-global scale so that the mean
per-entry power is 1, and persisted in a portable little-endian container:

    <dir>/meta.json     UTF-8 DatasetMeta
    <dir>/channels.f32  binary32, C-order [sample][rx][tx][re, im]
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..core.seeding import numpy_rng
from ..schemas.channels import (
    DATASET_FORMAT_VERSION,
    MIXED_SCENE,
    SCENE_PRESETS,
    DatasetMeta,
    SceneConfig,
    UPAGeometry,
    get_scene,
)


logger = logging.getLogger(__name__)

META_FILE = "meta.json"
PAYLOAD_FILE = "channels.f32"
_PAYLOAD_DTYPE = np.dtype("<c8")  # interleaved little-endian binary32 re/im


# =============================================================================
# EXCEPTIONS
# =============================================================================


class DatasetError(ChannelDiffusionError):
    """Base exception for dataset operations."""
    pass


class DatasetVersionError(DatasetError):
    """meta.json declares an unsupported format version."""
    pass


class TruncatedPayloadError(DatasetError):
    """Binary payload length disagrees with the metadata."""
    pass


# =============================================================================
# DATA TRANSFER OBJECTS
# =============================================================================


@dataclass
class ChannelDataset:
    """Ordered channel samples (complex64, shape (n, Nr, Nt)) plus metadata."""

    samples: np.ndarray
    meta: DatasetMeta

    def __post_init__(self) -> None:
        if self.samples.ndim != 3:
            raise ShapeMismatchError(
                f"samples must be (n, Nr, Nt), got shape {self.samples.shape}"
            )
        self.samples = np.ascontiguousarray(self.samples, dtype=np.complex64)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __getitem__(self, index: int) -> np.ndarray:
        return self.samples[index]

    @property
    def shape(self) -> tuple[int, int]:
        """Per-sample (Nr, Nt)."""
        return (self.samples.shape[1], self.samples.shape[2])

    def as_planes(self) -> np.ndarray:
        """Real (n, 2, Nr, Nt) float32 view used by the networks."""
        return np.stack([self.samples.real, self.samples.imag], axis=1).astype(
            np.float32
        )

    def mean_power(self) -> float:
        """Dataset-wide mean per-entry power E|H_ij|^2."""
        return float(np.mean(np.abs(self.samples.astype(np.complex128)) ** 2))


# =============================================================================
# ARRAY RESPONSE
# =============================================================================


def steering_vector_uv(geom: UPAGeometry, u: float, v: float) -> np.ndarray:
    """
    UPA response in direction-cosine coordinates.

    Element (m, n) is exp(j*pi*(m*u + n*v)) / sqrt(rows*cols), flattened
    row-major over (m, n).
    """
    m = np.arange(geom.rows)[:, None]
    n = np.arange(geom.cols)[None, :]
    phase = np.pi * (m * u + n * v)
    return (np.exp(1j * phase) / math.sqrt(geom.n_antennas)).reshape(-1)


def steering_vector(
    geom: UPAGeometry, azimuth_rad: float, elevation_rad: float
) -> np.ndarray:
    """Unit-norm UPA steering vector for an (azimuth, elevation) direction."""
    u = math.sin(elevation_rad) * math.sin(azimuth_rad)
    v = math.cos(elevation_rad)
    return steering_vector_uv(geom, u, v)


def _angles_to_uv(azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    return np.stack(
        [np.sin(elevation) * np.sin(azimuth), np.cos(elevation)], axis=-1
    )


# =============================================================================
# CHANNEL SYNTHESIS
# =============================================================================


def synthesize_channel(
    rx_geom: UPAGeometry,
    tx_geom: UPAGeometry,
    gains: np.ndarray,
    rx_uv: np.ndarray,
    tx_uv: np.ndarray,
    n_clusters: int | None = None,
) -> np.ndarray:
    """
    Multipath sum sqrt(Nr*Nt/L) * sum_p g_p a_r(p) a_t(p)^H.

    gains has one entry per path; rx_uv / tx_uv are (n_paths, 2) direction
    cosines. L defaults to the number of paths.
    """
    gains = np.asarray(gains, dtype=np.complex128).reshape(-1)
    rx_uv = np.asarray(rx_uv, dtype=np.float64).reshape(-1, 2)
    tx_uv = np.asarray(tx_uv, dtype=np.float64).reshape(-1, 2)
    if not (len(gains) == len(rx_uv) == len(tx_uv)):
        raise ShapeMismatchError("gains, rx_uv and tx_uv must have equal length")

    n_clusters = n_clusters or len(gains)
    a_r = np.stack([steering_vector_uv(rx_geom, u, v) for u, v in rx_uv], axis=1)
    a_t = np.stack([steering_vector_uv(tx_geom, u, v) for u, v in tx_uv], axis=1)
    scale = math.sqrt(rx_geom.n_antennas * tx_geom.n_antennas / n_clusters)
    return scale * (a_r * gains[None, :]) @ a_t.conj().T


def _complex_normal(rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)


def sample_channel(scene: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Draw one un-normalized channel from the scene's clustered model.

    L is uniform over n_clusters_range. Cluster powers are random and sum to
    one; when los_power_fraction > 0 the first cluster is a single LoS ray
    holding that fraction. Cluster centres are uniform over the azimuth /
    elevation sector and each ray is perturbed by angle_spread_deg.
    """
    lmin, lmax = scene.n_clusters_range
    n_clusters = int(rng.integers(lmin, lmax + 1))
    n_rays = scene.rays_per_cluster

    weights = rng.exponential(size=n_clusters)
    if scene.los_power_fraction > 0:
        rest = weights[1:]
        rest = rest / rest.sum() if rest.size and rest.sum() > 0 else rest
        powers = np.concatenate(
            [[scene.los_power_fraction], (1 - scene.los_power_fraction) * rest]
        )
        # a lone LoS cluster carries all the power
        powers = powers / powers.sum()
    else:
        powers = weights / weights.sum()

    spread = math.radians(scene.angle_spread_deg)
    az_lo, az_hi = np.radians(scene.azimuth_range_deg)
    el_lo, el_hi = np.radians(scene.elevation_range_deg)

    gains, rx_uv, tx_uv = [], [], []
    for cluster, power in enumerate(powers):
        los = cluster == 0 and scene.los_power_fraction > 0
        rays = 1 if los else n_rays
        centre_rx = (rng.uniform(az_lo, az_hi), rng.uniform(el_lo, el_hi))
        centre_tx = (rng.uniform(az_lo, az_hi), rng.uniform(el_lo, el_hi))
        if los:
            ray_gains = math.sqrt(power) * np.exp(1j * rng.uniform(0, 2 * np.pi, 1))
        else:
            ray_gains = math.sqrt(power / rays) * _complex_normal(rng, rays)
        offsets = rng.standard_normal((rays, 4)) * spread if not los else np.zeros((1, 4))
        rx_uv.append(
            _angles_to_uv(centre_rx[0] + offsets[:, 0], centre_rx[1] + offsets[:, 1])
        )
        tx_uv.append(
            _angles_to_uv(centre_tx[0] + offsets[:, 2], centre_tx[1] + offsets[:, 3])
        )
        gains.append(ray_gains)

    return synthesize_channel(
        scene.rx_geometry,
        scene.tx_geometry,
        np.concatenate(gains),
        np.concatenate(rx_uv),
        np.concatenate(tx_uv),
        n_clusters=n_clusters,
    )


# =============================================================================
# DATASETS
# =============================================================================


def generate_raw_channels(scene: SceneConfig, n_samples: int, seed: int) -> np.ndarray:
    """Un-normalized samples; sample i uses its own stream (seed, i)."""
    if n_samples <= 0:
        raise DatasetError(f"n_samples must be >= 1, got {n_samples}")
    raw = np.empty((n_samples, *scene.shape), dtype=np.complex128)
    for index in range(n_samples):
        raw[index] = sample_channel(scene, numpy_rng(seed, "channel", index))
    return raw


def normalization_scale(raw: np.ndarray) -> float:
    """Scalar that brings the mean per-entry power of raw to one."""
    power = float(np.mean(np.abs(raw) ** 2))
    if not power > 0:
        raise DatasetError("cannot normalize an all-zero channel set")
    return 1.0 / math.sqrt(power)


def generate_dataset(scene: SceneConfig, n_samples: int, seed: int) -> ChannelDataset:
    """Deterministic, normalized dataset for (scene, n_samples, seed)."""
    raw = generate_raw_channels(scene, n_samples, seed)
    scale = normalization_scale(raw)
    meta = DatasetMeta(
        n_samples=n_samples,
        n_rx=scene.shape[0],
        n_tx=scene.shape[1],
        scene=scene.name,
        carrier_ghz=scene.carrier_ghz,
        normalization_scale=scale,
        seed=seed,
        generator=scene.model_dump(mode="json"),
    )
    logger.info(f"Generated {n_samples} channels for scene '{scene.name}' (seed={seed})")
    return ChannelDataset(samples=(raw * scale).astype(np.complex64), meta=meta)


def mix_datasets(
    parts: Sequence[ChannelDataset],
    weights: Sequence[float],
    n_samples: int,
    seed: int,
) -> ChannelDataset:
    """Draw samples with replacement from parts according to weights."""
    if not parts:
        raise DatasetError("mix_datasets needs at least one part")
    if len(weights) != len(parts):
        raise DatasetError("one weight per part is required")
    shapes = {part.shape for part in parts}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"parts have different shapes: {sorted(shapes)}")
    probs = np.asarray(weights, dtype=np.float64)
    if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, abs_tol=1e-9):
        raise DatasetError(f"weights must be probabilities summing to 1, got {weights}")
    if n_samples <= 0:
        raise DatasetError(f"n_samples must be >= 1, got {n_samples}")

    rng = numpy_rng(seed, "mix")
    part_idx = rng.choice(len(parts), size=n_samples, p=probs)
    sample_idx = np.array([rng.integers(len(parts[p])) for p in part_idx], dtype=np.int64)
    samples = np.stack([parts[p][s] for p, s in zip(part_idx, sample_idx)])

    first = parts[0].meta
    meta = DatasetMeta(
        n_samples=n_samples,
        n_rx=first.n_rx,
        n_tx=first.n_tx,
        scene=MIXED_SCENE,
        carrier_ghz=first.carrier_ghz,
        normalization_scale=1.0,
        seed=seed,
        generator={
            "parts": [p.meta.scene for p in parts],
            "part_scales": [p.meta.normalization_scale for p in parts],
            "weights": [float(w) for w in probs],
        },
        provenance=[(int(p), int(s)) for p, s in zip(part_idx, sample_idx)],
    )
    return ChannelDataset(samples=samples, meta=meta)


def generate_named_dataset(name: str, n_samples: int, seed: int) -> ChannelDataset:
    """Preset scene by name; "mixed" is the equal-weight mixture of all presets."""
    if name != MIXED_SCENE:
        try:
            scene = get_scene(name)
        except ValueError as e:
            raise DatasetError(str(e)) from None
        return generate_dataset(scene, n_samples, seed)
    parts = [
        generate_dataset(scene, n_samples, seed + index)
        for index, scene in enumerate(SCENE_PRESETS.values())
    ]
    return mix_datasets(parts, [1 / len(parts)] * len(parts), n_samples, seed)


def split_dataset(
    ds: ChannelDataset, test_fraction: float, seed: int
) -> tuple[ChannelDataset, ChannelDataset]:
    """Deterministic (train, test) split."""
    n = len(ds)
    n_test = int(round(n * test_fraction))
    if not 0 < n_test < n:
        raise DatasetError(f"test_fraction={test_fraction} leaves an empty split for n={n}")
    order = numpy_rng(seed, "split").permutation(n)

    def subset(index: np.ndarray) -> ChannelDataset:
        meta = ds.meta.model_copy(update={"n_samples": len(index), "provenance": None})
        return ChannelDataset(samples=ds.samples[np.sort(index)], meta=meta)

    return subset(order[n_test:]), subset(order[:n_test])


def sample_covariance(ds: ChannelDataset) -> np.ndarray:
    """Covariance of column-major vec(H) over the dataset, (NrNt, NrNt)."""
    vecs = ds.samples.astype(np.complex128).transpose(0, 2, 1).reshape(len(ds), -1)
    return vecs.T @ vecs.conj() / len(ds)


# =============================================================================
# PERSISTENCE
# =============================================================================


def save_dataset(ds: ChannelDataset, path: str | Path) -> Path:
    """Write meta.json and channels.f32 under the directory path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = ds.meta.model_copy(update={"n_samples": len(ds), "n_rx": ds.shape[0], "n_tx": ds.shape[1]})
    (path / META_FILE).write_text(meta.model_dump_json(indent=2), encoding="utf-8")
    (path / PAYLOAD_FILE).write_bytes(ds.samples.astype(_PAYLOAD_DTYPE).tobytes())
    logger.info(f"Saved {len(ds)} channels to {path}")
    return path


def load_dataset(path: str | Path) -> ChannelDataset:
    """Read a dataset container; rejects unknown versions and short payloads."""
    path = Path(path)
    try:
        raw_meta = json.loads((path / META_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DatasetError(f"No dataset at {path}: {e}") from e

    version = str(raw_meta.get("version"))
    if version != DATASET_FORMAT_VERSION:
        raise DatasetVersionError(
            f"Dataset version '{version}' is not supported (expected '{DATASET_FORMAT_VERSION}')"
        )
    meta = DatasetMeta.model_validate(raw_meta)

    payload = (path / PAYLOAD_FILE).read_bytes()
    expected = meta.n_samples * meta.n_rx * meta.n_tx * 2 * 4
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"Payload has {len(payload)} bytes, expected {expected} "
            f"for {meta.n_samples}x{meta.n_rx}x{meta.n_tx}"
        )
    samples = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(
        meta.n_samples, meta.n_rx, meta.n_tx
    )
    return ChannelDataset(samples=samples.astype(np.complex64), meta=meta)


def import_channels(
    path: str | Path,
    scene: str,
    key: str = "channels",
    carrier_ghz: float = 28.0,
) -> ChannelDataset:
    """
    Load an externally produced channel array (.npy, .npz or MATLAB .mat).

    The array must be complex with shape (n, Nr, Nt); it is normalized with
    one dataset-global scale like generated data.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        array = np.load(path)
    elif suffix == ".npz":
        with np.load(path) as archive:
            array = archive[key]
    elif suffix == ".mat":
        from scipy.io import loadmat

        array = loadmat(path)[key]
    else:
        raise DatasetError(f"Unsupported channel file type '{suffix}'")

    array = np.asarray(array)
    if array.ndim != 3 or not np.iscomplexobj(array):
        raise ShapeMismatchError(
            f"Expected complex array shaped (n, Nr, Nt), got {array.dtype} {array.shape}"
        )
    raw = array.astype(np.complex128)
    if not np.all(np.isfinite(raw)):
        raise DatasetError(f"{path} contains non-finite channel entries")
    scale = normalization_scale(raw)
    meta = DatasetMeta(
        n_samples=raw.shape[0],
        n_rx=raw.shape[1],
        n_tx=raw.shape[2],
        scene=scene,
        carrier_ghz=carrier_ghz,
        normalization_scale=scale,
        generator={"source": str(path), "key": key},
    )
    return ChannelDataset(samples=(raw * scale).astype(np.complex64), meta=meta)
