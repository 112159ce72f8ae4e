"""
Diffusion Core: forward SDEs, denoising score matching, training, checkpoints.

VE:  x_t = x_0 + sigma(t) z,           sigma(t) = s_min (s_max / s_min)^t
VP:  x_t = x_0 exp(-B(t)/2) + sqrt(1 - exp(-B(t))) z,
     B(t) = b_min t + (b_max - b_min) t^2 / 2

Score models are trained with the lambda(t) = std(t)^2 weighted DSM loss
E ||std(t) s(x_t, t) + z||^2 and sampled with EMA weights.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np
import torch
from torch import nn
from tqdm.auto import tqdm

from ..core.config import get_settings
from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..core.seeding import torch_generator
from ..models import ChannelVAE, LatentScoreNet, ScoreNet, count_parameters
from ..schemas.base import CheckpointKind, SDEKind
from ..schemas.diffusion import (
    LatentNetConfig,
    ScoreNetConfig,
    SDEConfig,
    TrainConfig,
    VAEConfig,
)
from .channel_data import ChannelDataset


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = "1"
TRAIN_T_EPS = 1e-5
VP_SAMPLING_T_EPS = 1e-3

ScoreFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
TimeLike = float | torch.Tensor


# =============================================================================
# EXCEPTIONS
# =============================================================================


class DiffusionError(ChannelDiffusionError):
    """Base exception for diffusion core operations."""
    pass


class ScheduleError(DiffusionError):
    """Diffusion time outside [0, 1]."""
    pass


class TrainingDivergedError(DiffusionError):
    """Loss became non-finite during training."""
    pass


class CheckpointError(DiffusionError):
    """Checkpoint cannot be read or does not match expectations."""
    pass


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""
    pass


# =============================================================================
# SDES
# =============================================================================


def _exp(value: TimeLike) -> TimeLike:
    return torch.exp(value) if isinstance(value, torch.Tensor) else math.exp(value)


def _sqrt(value: TimeLike) -> TimeLike:
    return torch.sqrt(value) if isinstance(value, torch.Tensor) else math.sqrt(value)


class SDE:
    """Forward noising process; t runs from 0 (data) to 1 (prior)."""

    def __init__(self, config: SDEConfig):
        self.config = config

    @property
    def kind(self) -> SDEKind:
        return self.config.kind

    @property
    def N(self) -> int:
        return self.config.n_discretization

    def mean_coeff(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def std(self, t: TimeLike) -> TimeLike:
        raise NotImplementedError

    def sigma(self, t: TimeLike) -> TimeLike:
        """Noise scale of the schedule."""
        return self.std(t)

    @property
    def prior_std(self) -> float:
        raise NotImplementedError

    @property
    def t_min(self) -> float:
        """Smallest time visited by the sampler."""
        return 0.0

    def time_grid(self, n_steps: int, t_start: float = 1.0) -> np.ndarray:
        """t_0 < t_1 < ... < t_n = t_start; predictor step i goes t_i -> t_{i-1}."""
        lo = min(self.t_min, t_start)
        return lo + (t_start - lo) * np.arange(n_steps + 1) / n_steps


class VESDE(SDE):
    def sigma(self, t: TimeLike) -> TimeLike:
        c = self.config
        return c.sigma_min * (c.sigma_max / c.sigma_min) ** t

    def mean_coeff(self, t: TimeLike) -> TimeLike:
        return torch.ones_like(t) if isinstance(t, torch.Tensor) else 1.0

    def std(self, t: TimeLike) -> TimeLike:
        return self.sigma(t)

    @property
    def prior_std(self) -> float:
        return self.config.sigma_max

    def sigma_inverse(self, sigma_value: float) -> float:
        """Unclamped t with sigma(t) = sigma_value."""
        c = self.config
        return math.log(sigma_value / c.sigma_min) / math.log(c.sigma_max / c.sigma_min)


class VPSDE(SDE):
    def integrated_beta(self, t: TimeLike) -> TimeLike:
        c = self.config
        return c.beta_min * t + 0.5 * (c.beta_max - c.beta_min) * t**2

    def beta(self, t: TimeLike) -> TimeLike:
        c = self.config
        return c.beta_min + (c.beta_max - c.beta_min) * t

    def mean_coeff(self, t: TimeLike) -> TimeLike:
        return _exp(-0.5 * self.integrated_beta(t))

    def std(self, t: TimeLike) -> TimeLike:
        return _sqrt(1.0 - _exp(-self.integrated_beta(t)))

    @property
    def prior_std(self) -> float:
        return 1.0

    @property
    def t_min(self) -> float:
        return VP_SAMPLING_T_EPS

    def sigma_inverse(self, sigma_value: float) -> float:
        """Unclamped t with std(t) = sigma_value (sigma_value < 1)."""
        c = self.config
        if sigma_value >= 1.0:
            return math.inf
        target = -math.log(1.0 - sigma_value**2)
        a = 0.5 * (c.beta_max - c.beta_min)
        return (-c.beta_min + math.sqrt(c.beta_min**2 + 4 * a * target)) / (2 * a)


def make_sde(config: SDEConfig) -> SDE:
    """Construct the SDE object for a config."""
    return VESDE(config) if config.kind == SDEKind.VE else VPSDE(config)


def _as_sde(sde: SDE | SDEConfig) -> SDE:
    return sde if isinstance(sde, SDE) else make_sde(sde)


def sigma(t: float, sde: SDE | SDEConfig) -> float:
    """Noise scale at t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ScheduleError(f"t must lie in [0, 1], got {t}")
    return float(_as_sde(sde).sigma(t))


def _expand(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return values.reshape(-1, *([1] * (like.ndim - 1)))


def _time_tensor(t: TimeLike, batch: int, like: torch.Tensor) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        t = t.to(device=like.device, dtype=like.dtype)
        return t.expand(batch) if t.ndim == 0 else t
    return torch.full((batch,), float(t), device=like.device, dtype=like.dtype)


def perturb(
    x0: torch.Tensor,
    t: TimeLike,
    sde: SDE | SDEConfig,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample x_t ~ p(x_t | x_0); returns (x_t, z)."""
    sde = _as_sde(sde)
    t = _time_tensor(t, x0.shape[0], x0)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    mean = _expand(sde.mean_coeff(t), x0) * x0
    return mean + _expand(sde.std(t), x0) * noise, noise


# =============================================================================
# SCORE MODELS
# =============================================================================


class ConditionalScore(Protocol):
    def __call__(
        self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None
    ) -> torch.Tensor: ...


class ScoreModel(nn.Module):
    """s(x, t[, c]) = net(x, t[, c]) / std(t)."""

    def __init__(self, net: nn.Module, sde: SDE | SDEConfig):
        super().__init__()
        self.net = net
        self.sde = _as_sde(sde)

    @property
    def data_shape_rank(self) -> int:
        return 3 if isinstance(self.net, ScoreNet) else 1

    def validate_data_shape(self, shape: tuple[int, ...]) -> None:
        config = self.net.config
        if isinstance(self.net, ScoreNet):
            ok = len(shape) == 3 and shape[0] == config.data_channels
        else:
            ok = len(shape) == 1 and shape[0] == config.dim
        if not ok:
            raise ShapeMismatchError(
                f"data shape {shape} does not match {type(self.net).__name__} input"
            )

    def forward(
        self, x: torch.Tensor, t: TimeLike, cond: torch.Tensor | None = None
    ) -> torch.Tensor:
        t = _time_tensor(t, x.shape[0], x)
        return self.net(x, t, cond) / _expand(self.sde.std(t), x)


def analytic_gaussian_score(
    mean: torch.Tensor | float,
    var_diag: torch.Tensor | float,
    x: torch.Tensor,
    t: TimeLike,
    sde: SDE | SDEConfig,
) -> torch.Tensor:
    """Exact score of the perturbed marginal of N(mean, diag(var_diag))."""
    sde = _as_sde(sde)
    if isinstance(var_diag, torch.Tensor):
        if torch.any(var_diag <= 0):
            raise ValueError("var_diag must be positive")
    elif var_diag <= 0:
        raise ValueError("var_diag must be positive")
    t = _time_tensor(t, x.shape[0], x)
    m = _expand(sde.mean_coeff(t), x)
    s = _expand(sde.std(t), x)
    return -(x - m * mean) / (m**2 * var_diag + s**2)


def gaussian_score_fn(
    mean: torch.Tensor | float, var_diag: torch.Tensor | float, sde: SDE | SDEConfig
) -> ScoreFn:
    """Closure over analytic_gaussian_score with the sampler's signature."""
    sde = _as_sde(sde)

    def score_fn(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return analytic_gaussian_score(mean, var_diag, x, t, sde)

    return score_fn


def dsm_loss(
    model: ConditionalScore,
    batch: torch.Tensor,
    sde: SDE | SDEConfig,
    generator: torch.Generator | None = None,
    cond: torch.Tensor | None = None,
    eps: float = TRAIN_T_EPS,
) -> torch.Tensor:
    """Mean over the batch of ||std(t) s(x_t, t) + z||^2, t ~ U(eps, 1]."""
    if batch.shape[0] == 0:
        raise ValueError("dsm_loss needs a nonempty batch")
    sde = _as_sde(sde)
    u = torch.rand(batch.shape[0], generator=generator, dtype=batch.dtype, device=batch.device)
    t = eps + (1.0 - eps) * u
    x_t, z = perturb(batch, t, sde, generator=generator)
    score = model(x_t, t, cond) if cond is not None else model(x_t, t)
    residual = _expand(sde.std(t), batch) * score + z
    return residual.pow(2).flatten(start_dim=1).sum(dim=1).mean()


# =============================================================================
# NETWORK REGISTRY
# =============================================================================


_ARCHITECTURES: dict[str, tuple[type[nn.Module], type]] = {
    "score_net": (ScoreNet, ScoreNetConfig),
    "latent_net": (LatentScoreNet, LatentNetConfig),
    "vae": (ChannelVAE, VAEConfig),
}


def _arch_name(net: nn.Module) -> str:
    for name, (cls, _) in _ARCHITECTURES.items():
        if isinstance(net, cls):
            return name
    raise CheckpointError(f"Unregistered network type {type(net).__name__}")


def build_network(arch: str, config: dict[str, Any], seed: int = 0) -> nn.Module:
    """Instantiate a registered network with deterministic initialization."""
    try:
        cls, config_cls = _ARCHITECTURES[arch]
    except KeyError:
        raise CheckpointError(f"Unknown network architecture '{arch}'") from None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(config_cls.model_validate(config))


def build_score_model(
    net_config: ScoreNetConfig | LatentNetConfig, sde: SDE | SDEConfig, seed: int = 0
) -> ScoreModel:
    arch = "score_net" if isinstance(net_config, ScoreNetConfig) else "latent_net"
    net = build_network(arch, net_config.model_dump(mode="json"), seed=seed)
    return ScoreModel(net, sde)


# =============================================================================
# TRAINING
# =============================================================================


class ExponentialMovingAverage:
    """Shadow copy of parameters updated as p_ema <- d p_ema + (1 - d) p."""

    def __init__(self, module: nn.Module, decay: float):
        self.decay = decay
        self.shadow = copy.deepcopy(module).eval()
        for param in self.shadow.parameters():
            param.requires_grad_(False)

    @torch.no_grad()
    def update(self, module: nn.Module) -> None:
        for ema_p, p in zip(self.shadow.parameters(), module.parameters()):
            ema_p.lerp_(p.detach(), 1.0 - self.decay)
        for ema_b, b in zip(self.shadow.buffers(), module.buffers()):
            ema_b.copy_(b)


@dataclass
class Checkpoint:
    """Trained network plus everything needed to reuse it."""

    model: nn.Module
    kind: CheckpointKind
    data_shape: tuple[int, ...]
    sde_config: SDEConfig | None = None
    normalization_scale: float = 1.0
    train_config: TrainConfig | None = None
    history: list[float] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def score_fn(self, cond: torch.Tensor | None = None) -> ScoreFn:
        """Sampler-facing score, optionally bound to a condition."""
        if not isinstance(self.model, ScoreModel):
            raise CheckpointError(f"{self.kind.value} checkpoint has no score function")
        model = self.model

        @torch.no_grad()
        def score(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
            if cond is None:
                return model(x, t)
            return model(x, t, cond.expand(x.shape[0], *cond.shape[1:]))

        return score


ConditionSampler = Callable[[torch.Tensor, torch.Generator], torch.Tensor | None]


def _training_tensor(data: ChannelDataset | np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(data, ChannelDataset):
        data = data.as_planes()
    tensor = torch.as_tensor(np.asarray(data) if not isinstance(data, torch.Tensor) else data)
    return tensor.to(torch.float32)


def train(
    model: ScoreModel,
    dataset: ChannelDataset | np.ndarray | torch.Tensor,
    sde: SDE | SDEConfig,
    cfg: TrainConfig,
    condition_sampler: ConditionSampler | None = None,
    kind: CheckpointKind = CheckpointKind.SCORE,
    extra: dict[str, Any] | None = None,
) -> Checkpoint:
    """
    Fit a score model by DSM with Adam and keep EMA weights.

    Deterministic given cfg.seed up to floating-point reduction order.
    Raises TrainingDivergedError as soon as the loss is non-finite.
    """
    settings = get_settings()
    sde = _as_sde(sde)
    model.sde = sde
    normalization_scale = (
        dataset.meta.normalization_scale if isinstance(dataset, ChannelDataset) else 1.0
    )
    data = _training_tensor(dataset)
    model.validate_data_shape(tuple(data.shape[1:]))
    device = torch.device(settings.device)
    data = data.to(device)
    model.to(device).train()

    generator = torch_generator(cfg.seed, "train", device=str(device))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    ema = ExponentialMovingAverage(model, cfg.ema_decay)
    history: list[float] = []

    logger.info(
        f"Training {type(model.net).__name__} ({count_parameters(model):,} params) for {cfg.steps} steps "
        f"(batch={cfg.batch_size}, lr={cfg.learning_rate}, n={data.shape[0]})"
    )
    progress = tqdm(range(cfg.steps), desc="train", disable=not settings.show_progress)
    for step in progress:
        idx = torch.randint(data.shape[0], (cfg.batch_size,), generator=generator, device=device)
        batch = data[idx]
        cond = condition_sampler(batch, generator) if condition_sampler else None
        loss = dsm_loss(model, batch, sde, generator=generator, cond=cond)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"Loss became non-finite at step {step}")

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip is not None:
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        ema.update(model)

        history.append(float(loss.item()))
        if (step + 1) % cfg.log_every == 0:
            recent = float(np.mean(history[-cfg.log_every:]))
            progress.set_postfix(loss=f"{recent:.4f}")
            logger.info(f"step {step + 1}/{cfg.steps}: loss={recent:.5f}")

    trained = ScoreModel(ema.shadow.net, sde).eval()
    return Checkpoint(
        model=trained,
        kind=kind,
        data_shape=tuple(int(s) for s in data.shape[1:]),
        sde_config=sde.config,
        normalization_scale=normalization_scale,
        train_config=cfg,
        history=history,
        extra=dict(extra or {}),
    )


# =============================================================================
# PERSISTENCE
# =============================================================================


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Write a self-describing checkpoint (loadable with weights_only=True)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    net = ckpt.model.net if isinstance(ckpt.model, ScoreModel) else ckpt.model
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": ckpt.kind.value,
        "network": {
            "arch": _arch_name(net),
            "config": net.config.model_dump(mode="json"),
        },
        "state_dict": {k: v.detach().cpu() for k, v in net.state_dict().items()},
        "sde": ckpt.sde_config.model_dump(mode="json") if ckpt.sde_config else None,
        "data_shape": list(ckpt.data_shape),
        "normalization_scale": float(ckpt.normalization_scale),
        "train_config": ckpt.train_config.model_dump(mode="json") if ckpt.train_config else None,
        "history": [float(v) for v in ckpt.history],
        "extra": ckpt.extra,
    }
    torch.save(payload, path)
    logger.info(f"Saved {ckpt.kind.value} checkpoint to {path}")
    return path


def load_checkpoint(
    path: str | Path,
    expected_shape: tuple[int, ...] | None = None,
    expected_kind: CheckpointKind | None = None,
) -> Checkpoint:
    """Read a checkpoint; optionally enforce the data shape and kind."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"No checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)

    version = str(payload.get("format_version"))
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Checkpoint version '{version}' is not supported "
            f"(expected '{CHECKPOINT_FORMAT_VERSION}')"
        )
    kind = CheckpointKind(payload["kind"])
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"Expected a {expected_kind.value} checkpoint, got {kind.value}")
    data_shape = tuple(int(s) for s in payload["data_shape"])
    if expected_shape is not None and tuple(expected_shape) != data_shape[-len(expected_shape):]:
        raise ShapeMismatchError(
            f"Checkpoint was trained on shape {data_shape}, expected {tuple(expected_shape)}"
        )

    net = build_network(payload["network"]["arch"], payload["network"]["config"])
    net.load_state_dict(payload["state_dict"])
    sde_config = SDEConfig.model_validate(payload["sde"]) if payload["sde"] else None
    model: nn.Module = net if sde_config is None else ScoreModel(net, sde_config)
    model.eval()

    train_config = payload.get("train_config")
    return Checkpoint(
        model=model,
        kind=kind,
        data_shape=data_shape,
        sde_config=sde_config,
        normalization_scale=float(payload["normalization_scale"]),
        train_config=TrainConfig.model_validate(train_config) if train_config else None,
        history=list(payload["history"]),
        extra=dict(payload.get("extra") or {}),
    )
