"""
Latent Feedback: VAE compression of CSI over a quantized, noisy feedback link.

Terminal:      H -> z = encoder mean -> uniform codes -> payload bytes
Link:          bin centers sent as analog symbols, z~ = z_q + n
Base station:  optional latent denoising from the noise-matched time t*,
               then decode z_hat -> H_hat

The report splits the end-to-end NMSE into the VAE floor, the quantizer and
the link noise so each stage can be audited on its own.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from tqdm.auto import tqdm

from ..core.config import get_settings
from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..core.seeding import torch_generator
from ..models import ChannelVAE
from ..schemas.base import CheckpointKind
from ..schemas.diffusion import LatentNetConfig, SamplerConfig, SDEConfig, TrainConfig, VAEConfig
from ..schemas.feedback import FeedbackConfig
from .baselines import nmse, nmse_linear
from .channel_data import ChannelDataset, split_dataset
from .diffusion_core import (
    SDE,
    Checkpoint,
    ScoreModel,
    TrainingDivergedError,
    build_network,
    build_score_model,
    load_checkpoint,
    make_sde,
    save_checkpoint,
    train,
)
from .guided_sampler import run_predictor_corrector


logger = logging.getLogger(__name__)

PAYLOAD_VERSION = 1
PAYLOAD_HEADER = struct.Struct(">IIIf")  # version, d, bits, clip


# =============================================================================
# EXCEPTIONS
# =============================================================================


class FeedbackError(ChannelDiffusionError):
    """Invalid feedback-link request."""
    pass


class PayloadFormatError(FeedbackError):
    """Feedback payload bytes cannot be parsed."""
    pass


# =============================================================================
# VAE
# =============================================================================


@dataclass
class VAEModel:
    """Trained VAE plus the latent statistics the quantizer and link need."""

    vae: ChannelVAE
    latent_std: np.ndarray
    latent_power: float
    recon_nmse_db: float
    history: list[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.vae.latent_dim

    @property
    def compression_ratio(self) -> float:
        """Real channel coordinates per latent dimension."""
        c = self.vae.config
        return 2 * c.n_rx * c.n_tx / c.latent_dim


def _planes(H: np.ndarray) -> torch.Tensor:
    H = np.asarray(H)
    return torch.from_numpy(np.stack([H.real, H.imag], axis=1).astype(np.float32))


def encode(model: VAEModel, H: np.ndarray) -> np.ndarray:
    """Posterior mean latent(s) for (Nr, Nt) or (B, Nr, Nt) channels."""
    single = H.ndim == 2
    H = H[None] if single else H
    c = model.vae.config
    if H.shape[1:] != (c.n_rx, c.n_tx):
        raise ShapeMismatchError(f"channel {H.shape[1:]} does not match VAE {(c.n_rx, c.n_tx)}")
    with torch.no_grad():
        mu, _ = model.vae.encode(_planes(H))
    z = mu.double().numpy()
    return z[0] if single else z


def decode(model: VAEModel, z: np.ndarray) -> np.ndarray:
    """Channel(s) from latent(s) of dimension d."""
    single = z.ndim == 1
    z = z[None] if single else z
    if z.shape[1] != model.latent_dim:
        raise ShapeMismatchError(f"latent dim {z.shape[1]} != {model.latent_dim}")
    with torch.no_grad():
        planes = model.vae.decode(torch.as_tensor(z, dtype=torch.float32))
    H = planes[:, 0].double().numpy() + 1j * planes[:, 1].double().numpy()
    return H[0] if single else H


def _mean_nmse_db(estimates: np.ndarray, truths: np.ndarray) -> float:
    linear = float(np.mean([nmse_linear(e, t) for e, t in zip(estimates, truths)]))
    return 10 * math.log10(max(linear, 1e-10))


def vae_train(
    dataset: ChannelDataset,
    latent_dim: int,
    beta: float,
    cfg: TrainConfig,
    hidden: tuple[int, ...] = (512, 256),
    holdout_fraction: float = 0.1,
) -> VAEModel:
    """
    Minimize squared reconstruction error + beta KL(q(z|H) || N(0, I)).

    Latent statistics come from the training split; the recorded recon NMSE
    is measured on the held-out split (or the training set when
    holdout_fraction is 0).
    """
    if latent_dim < 1:
        raise FeedbackError(f"latent_dim must be >= 1, got {latent_dim}")
    if holdout_fraction > 0:
        train_ds, test_ds = split_dataset(dataset, holdout_fraction, cfg.seed)
    else:
        train_ds, test_ds = dataset, dataset

    n_rx, n_tx = dataset.shape
    config = VAEConfig(n_rx=n_rx, n_tx=n_tx, latent_dim=latent_dim, hidden=hidden, beta=beta)
    vae = build_network("vae", config.model_dump(mode="json"), seed=cfg.seed)
    assert isinstance(vae, ChannelVAE)

    settings = get_settings()
    data = torch.from_numpy(train_ds.as_planes())
    generator = torch_generator(cfg.seed, "vae")
    optimizer = torch.optim.Adam(vae.parameters(), lr=cfg.learning_rate)
    history: list[float] = []
    vae.train()

    logger.info(f"Training VAE d={latent_dim} beta={beta} on {len(train_ds)} channels")
    for step in tqdm(range(cfg.steps), desc="vae", disable=not settings.show_progress):
        idx = torch.randint(data.shape[0], (cfg.batch_size,), generator=generator)
        x = data[idx]
        x_hat, mu, logvar = vae(x, generator=generator)
        recon = (x_hat - x).pow(2).flatten(start_dim=1).sum(dim=1).mean()
        kl = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=1).mean()
        loss = recon + beta * kl
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"VAE loss became non-finite at step {step}")

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(vae.parameters(), cfg.grad_clip)
        optimizer.step()
        history.append(float(loss.item()))
        if (step + 1) % cfg.log_every == 0:
            logger.info(f"vae step {step + 1}/{cfg.steps}: loss={np.mean(history[-cfg.log_every:]):.5f}")

    vae.eval()
    model = VAEModel(vae=vae, latent_std=np.ones(latent_dim), latent_power=1.0, recon_nmse_db=0.0)
    z_train = encode(model, train_ds.samples)
    model.latent_std = np.maximum(z_train.std(axis=0), 1e-8)
    model.latent_power = float(np.mean(z_train**2))
    model.recon_nmse_db = _mean_nmse_db(decode(model, encode(model, test_ds.samples)), test_ds.samples)
    model.history = history
    logger.info(
        f"VAE trained: recon NMSE {model.recon_nmse_db:.2f} dB, "
        f"compression {model.compression_ratio:.0f}x"
    )
    return model


def save_vae(model: VAEModel, path: str | Path) -> Path:
    c = model.vae.config
    ckpt = Checkpoint(
        model=model.vae,
        kind=CheckpointKind.VAE,
        data_shape=(2, c.n_rx, c.n_tx),
        history=model.history,
        extra={
            "latent_std": [float(s) for s in model.latent_std],
            "latent_power": float(model.latent_power),
            "recon_nmse_db": float(model.recon_nmse_db),
        },
    )
    return save_checkpoint(ckpt, path)


def load_vae(path: str | Path) -> VAEModel:
    ckpt = load_checkpoint(path, expected_kind=CheckpointKind.VAE)
    assert isinstance(ckpt.model, ChannelVAE)
    return VAEModel(
        vae=ckpt.model,
        latent_std=np.asarray(ckpt.extra["latent_std"], dtype=np.float64),
        latent_power=float(ckpt.extra["latent_power"]),
        recon_nmse_db=float(ckpt.extra["recon_nmse_db"]),
        history=ckpt.history,
    )


# =============================================================================
# QUANTIZER AND PAYLOAD
# =============================================================================


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= 16:
        raise FeedbackError(f"bits must be in [1, 16], got {bits}")


def _bin_width(bits: int, clip: float, latent_std: np.ndarray) -> np.ndarray:
    return 2.0 * clip * latent_std / 2**bits


def quantize(z: np.ndarray, bits: int, clip: float, latent_std: np.ndarray) -> np.ndarray:
    """Uniform per-dimension codes over [-clip std_i, clip std_i]; saturating."""
    _check_bits(bits)
    width = _bin_width(bits, clip, latent_std)
    codes = np.floor((np.asarray(z) + clip * latent_std) / width)
    return np.clip(codes, 0, 2**bits - 1).astype(np.uint32)


def dequantize(codes: np.ndarray, bits: int, clip: float, latent_std: np.ndarray) -> np.ndarray:
    """Bin centers for codes."""
    _check_bits(bits)
    width = _bin_width(bits, clip, latent_std)
    return -clip * latent_std + (np.asarray(codes, dtype=np.float64) + 0.5) * width


def encode_payload(codes: np.ndarray, bits: int, clip: float) -> bytes:
    """16-byte big-endian header followed by big-endian bit-packed codes."""
    _check_bits(bits)
    codes = np.asarray(codes, dtype=np.uint32).reshape(-1)
    if np.any(codes >= 2**bits):
        raise FeedbackError(f"codes do not fit in {bits} bits")
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    bit_matrix = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    header = PAYLOAD_HEADER.pack(PAYLOAD_VERSION, codes.size, bits, clip)
    return header + np.packbits(bit_matrix.reshape(-1)).tobytes()


def decode_payload(payload: bytes) -> tuple[np.ndarray, int, float]:
    """Inverse of encode_payload: (codes, bits, clip)."""
    if len(payload) < PAYLOAD_HEADER.size:
        raise PayloadFormatError(f"payload of {len(payload)} bytes has no header")
    version, d, bits, clip = PAYLOAD_HEADER.unpack_from(payload)
    if version != PAYLOAD_VERSION:
        raise PayloadFormatError(f"payload version {version} is not supported")
    if not 1 <= bits <= 16:
        raise PayloadFormatError(f"payload declares {bits} bits per dimension")
    body = payload[PAYLOAD_HEADER.size:]
    expected = math.ceil(d * bits / 8)
    if len(body) != expected:
        raise PayloadFormatError(f"payload body is {len(body)} bytes, expected {expected}")
    bit_array = np.unpackbits(np.frombuffer(body, dtype=np.uint8))[: d * bits]
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.uint32)
    codes = bit_array.reshape(d, bits).astype(np.uint32) @ weights
    return codes.astype(np.uint32), bits, float(clip)


# =============================================================================
# LINK
# =============================================================================


def feedback_noise_std(snr_db: float, reference_power: float) -> float:
    """Per-dimension noise std with variance reference_power / 10^(snr/10)."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return math.sqrt(reference_power / 10 ** (snr_db / 10))


def corrupt_feedback(
    z: np.ndarray,
    feedback_snr_db: float,
    rng: np.random.Generator,
    reference_power: float | None = None,
) -> np.ndarray:
    """z + n, n ~ N(0, s^2 I) with s set from the SNR against the latent power."""
    z = np.asarray(z, dtype=np.float64)
    power = float(np.mean(z**2)) if reference_power is None else reference_power
    std = feedback_noise_std(feedback_snr_db, power)
    if std == 0:
        return z.copy()
    return z + std * rng.standard_normal(z.shape)


# =============================================================================
# LATENT DENOISING
# =============================================================================


def latent_start_time(sde: SDE | SDEConfig, sigma_f: float) -> float:
    """Noise-matched start t* with sigma(t*) = sigma_f, clamped to [0, 1]."""
    sde = sde if isinstance(sde, SDE) else make_sde(sde)
    if sigma_f < 0:
        raise FeedbackError(f"sigma_f must be >= 0, got {sigma_f}")
    if sigma_f == 0:
        return 0.0
    t = sde.sigma_inverse(sigma_f)  # type: ignore[attr-defined]
    return float(min(max(t, 0.0), 1.0))


def train_latent_denoiser(
    model: VAEModel,
    dataset: ChannelDataset,
    sde: SDE | SDEConfig,
    cfg: TrainConfig,
    net_config: LatentNetConfig | None = None,
) -> Checkpoint:
    """DSM training of a dense score network on clean posterior-mean latents."""
    net_config = net_config or LatentNetConfig(dim=model.latent_dim)
    if net_config.dim != model.latent_dim:
        raise ShapeMismatchError(f"latent net dim {net_config.dim} != {model.latent_dim}")
    latents = torch.from_numpy(encode(model, dataset.samples).astype(np.float32))
    sde = sde if isinstance(sde, SDE) else make_sde(sde)
    score_model = build_score_model(net_config, sde, seed=cfg.seed)
    return train(score_model, latents, sde, cfg, kind=CheckpointKind.LATENT_SCORE)


def latent_denoise(
    z_tilde: np.ndarray,
    checkpoint: Checkpoint,
    sigma_f: float,
    cfg: SamplerConfig,
    generator: torch.Generator | None = None,
) -> np.ndarray:
    """
    Reverse PC from t* down to the end of the grid, starting at z~.

    Returns the mean of cfg.n_samples chains per latent. sigma_f = 0 skips
    denoising and returns z~ unchanged.
    """
    model = checkpoint.model
    if not isinstance(model, ScoreModel):
        raise FeedbackError(f"{checkpoint.kind.value} checkpoint cannot denoise latents")
    t_star = latent_start_time(model.sde, sigma_f)
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if t_star == 0.0:
        return z_tilde.copy()

    single = z_tilde.ndim == 1
    batch = z_tilde[None] if single else z_tilde
    n, d = batch.shape
    k = cfg.n_samples
    x0 = torch.as_tensor(batch, dtype=torch.float32).repeat_interleave(k, dim=0)
    x_init = float(model.sde.mean_coeff(t_star)) * x0

    result = run_predictor_corrector(
        lambda x, t: model(x, t),
        (n * k, d),
        model.sde,
        cfg,
        generator=generator,
        x_init=x_init,
        t_start=t_star,
    )
    samples = result.samples.double().reshape(n, k, d).numpy()
    z_hat = np.nanmean(samples, axis=1)
    return z_hat[0] if single else z_hat


# =============================================================================
# ROUND TRIP
# =============================================================================


@dataclass
class FeedbackReport:
    """End-to-end result with the distortion decomposition."""

    H_hat: np.ndarray
    nmse_db: float
    payload_bits: int
    vae_floor_nmse_db: float
    quantization_nmse_db: float | None
    link_noise_std: float
    latent_nmse_db_link: float | None
    latent_nmse_db_denoised: float | None
    t_start: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "nmse_db": self.nmse_db,
            "payload_bits": self.payload_bits,
            "vae_floor_nmse_db": self.vae_floor_nmse_db,
            "quantization_nmse_db": self.quantization_nmse_db,
            "link_noise_std": self.link_noise_std,
            "latent_nmse_db_link": self.latent_nmse_db_link,
            "latent_nmse_db_denoised": self.latent_nmse_db_denoised,
            "t_start": self.t_start,
        }


def feedback_roundtrip(
    H: np.ndarray,
    model: VAEModel,
    latent_checkpoint: Checkpoint | None,
    fcfg: FeedbackConfig,
    rng: np.random.Generator,
    generator: torch.Generator | None = None,
) -> FeedbackReport:
    """
    encode -> quantize -> payload -> corrupt -> denoise -> decode.

    payload_bits is d * bits_per_dim; unquantized (analog) feedback reports 0.
    """
    z = encode(model, H)
    floor_db = nmse(decode(model, z), H)

    quant_db: float | None = None
    if fcfg.bits_per_dim > 0:
        codes = quantize(z, fcfg.bits_per_dim, fcfg.clip_multiple, model.latent_std)
        payload = encode_payload(codes, fcfg.bits_per_dim, fcfg.clip_multiple)
        received, bits, clip = decode_payload(payload)
        z_q = dequantize(received, bits, clip, model.latent_std)
        quant_db = nmse(decode(model, z_q), H)
    else:
        z_q = z

    sigma_f = feedback_noise_std(fcfg.feedback_snr_db, model.latent_power)
    z_tilde = corrupt_feedback(z_q, fcfg.feedback_snr_db, rng, reference_power=model.latent_power)

    z_hat = z_tilde
    t_start: float | None = None
    link_db: float | None = None
    denoised_db: float | None = None
    if sigma_f > 0:
        link_db = nmse(z_tilde, z_q)
        if fcfg.latent_denoise_enabled:
            if latent_checkpoint is None:
                raise FeedbackError("latent denoising is enabled but no latent checkpoint was given")
            assert isinstance(latent_checkpoint.model, ScoreModel)
            t_start = latent_start_time(latent_checkpoint.model.sde, sigma_f)
            z_hat = latent_denoise(z_tilde, latent_checkpoint, sigma_f, fcfg.sampler, generator)
            denoised_db = nmse(z_hat, z_q)

    H_hat = decode(model, z_hat)
    return FeedbackReport(
        H_hat=H_hat,
        nmse_db=nmse(H_hat, H),
        payload_bits=model.latent_dim * fcfg.bits_per_dim,
        vae_floor_nmse_db=floor_db,
        quantization_nmse_db=quant_db,
        link_noise_std=sigma_f,
        latent_nmse_db_link=link_db,
        latent_nmse_db_denoised=denoised_db,
        t_start=t_start,
    )
