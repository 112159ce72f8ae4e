"""
Extrapolation: fill in unobserved antennas from a sensed sub-array.

One network serves both roles. It is trained on condition planes
(masked Re H, masked Im H, mask) and, with probability p_drop, on the
all-zero null condition. At sampling time the conditional and null scores
are mixed by cfg_score and the observed entries are written back into every
output sample.
"""

import logging
import re
from dataclasses import dataclass

import numpy as np
import torch

from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..schemas.base import CheckpointKind
from ..schemas.diffusion import SamplerConfig, TrainConfig
from .channel_data import ChannelDataset
from .diffusion_core import SDE, Checkpoint, ScoreModel, train
from .guided_sampler import ChannelEstimate, cfg_score, estimate_channel, run_predictor_corrector


logger = logging.getLogger(__name__)

CONDITION_CHANNELS = 3
TRAIN_FRACTION_RANGE = (0.2, 0.8)
DEFAULT_P_DROP = 0.1

_MASK_SPEC = re.compile(r"^(random|block-rows|block-cols):([0-9.]+)$")


# =============================================================================
# EXCEPTIONS
# =============================================================================


class ConditionError(ChannelDiffusionError):
    """Invalid condition for training or sampling."""
    pass


class MaskSpecError(ConditionError):
    """Mask preset string cannot be parsed or does not fit the array."""
    pass


# =============================================================================
# MASKS AND CONDITIONS
# =============================================================================


def parse_mask_spec(spec: str) -> tuple[str, float]:
    """'random:0.5' -> ('random', 0.5); 'block-rows:4' -> ('block-rows', 4.0)."""
    match = _MASK_SPEC.match(spec.strip())
    if not match:
        raise MaskSpecError(
            f"Invalid mask spec '{spec}' (expected random:<f>, block-rows:<k> or block-cols:<k>)"
        )
    kind, raw = match.groups()
    value = float(raw)
    if kind == "random":
        if not 0 < value <= 1:
            raise MaskSpecError(f"random fraction must be in (0, 1], got {value}")
    elif value != int(value) or value < 1:
        raise MaskSpecError(f"{kind} needs a positive integer count, got {raw}")
    return kind, value


def make_mask(
    spec: str, shape: tuple[int, int], rng: np.random.Generator | None = None
) -> np.ndarray:
    """Boolean (Nr, Nt) mask for a preset; True marks an observed entry."""
    kind, value = parse_mask_spec(spec)
    n_rx, n_tx = shape
    mask = np.zeros(shape, dtype=bool)
    if kind == "random":
        if rng is None:
            raise MaskSpecError("random masks need an rng")
        n_observed = max(1, int(round(value * mask.size)))
        mask.flat[rng.permutation(mask.size)[:n_observed]] = True
    elif kind == "block-rows":
        if value > n_rx:
            raise MaskSpecError(f"block-rows:{int(value)} exceeds Nr={n_rx}")
        mask[: int(value), :] = True
    else:
        if value > n_tx:
            raise MaskSpecError(f"block-cols:{int(value)} exceeds Nt={n_tx}")
        mask[:, : int(value)] = True
    return mask


@dataclass
class Condition:
    """Condition planes (3, Nr, Nt): masked Re H, masked Im H, mask."""

    planes: np.ndarray
    null: bool = False

    @property
    def mask(self) -> np.ndarray:
        return self.planes[2] > 0.5

    @property
    def observed_fraction(self) -> float:
        return float(self.mask.mean())

    @property
    def observed(self) -> np.ndarray:
        """Observed complex values (zeros elsewhere)."""
        return self.planes[0].astype(np.float64) + 1j * self.planes[1].astype(np.float64)

    def to_tensor(self, scale: float = 1.0) -> torch.Tensor:
        planes = self.planes.astype(np.float32).copy()
        planes[:2] *= scale
        return torch.from_numpy(planes).unsqueeze(0)


def null_condition(shape: tuple[int, int]) -> Condition:
    return Condition(planes=np.zeros((CONDITION_CHANNELS, *shape), dtype=np.float32), null=True)


def make_condition(H: np.ndarray | None, mask: np.ndarray | None, null: bool = False) -> Condition:
    """Mask H elementwise and append the mask plane."""
    if null:
        shape = H.shape if H is not None else mask.shape  # type: ignore[union-attr]
        return null_condition(tuple(shape))
    if H is None or mask is None:
        raise ConditionError("a non-null condition needs both H and a mask")
    mask = np.asarray(mask, dtype=bool)
    if H.shape != mask.shape:
        raise ShapeMismatchError(f"H {H.shape} and mask {mask.shape} differ")
    if not mask.any():
        raise ConditionError("mask observes no entries")
    planes = np.stack([np.where(mask, H.real, 0.0), np.where(mask, H.imag, 0.0), mask])
    return Condition(planes=planes.astype(np.float32))


def sample_training_conditions(
    batch: torch.Tensor,
    p_drop: float,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Fresh random-mask conditions for a (B, 2, Nr, Nt) batch.

    Each example draws an observed fraction f ~ U[0.2, 0.8] and observes each
    entry with probability f; with probability p_drop its condition is null.
    Returns (conditions (B, 3, Nr, Nt), null flags (B,)).
    """
    b = batch.shape[0]
    opts = {"generator": generator, "device": batch.device, "dtype": batch.dtype}
    lo, hi = TRAIN_FRACTION_RANGE
    fraction = lo + (hi - lo) * torch.rand(b, **opts)
    mask = (torch.rand((b, 1, *batch.shape[2:]), **opts) < fraction.reshape(-1, 1, 1, 1))
    null = torch.rand(b, **opts) < p_drop
    mask = mask & ~null.reshape(-1, 1, 1, 1)
    mask = mask.to(batch.dtype)
    return torch.cat([batch * mask, mask], dim=1), null


# =============================================================================
# TRAINING AND SAMPLING
# =============================================================================


def train_conditional(
    model: ScoreModel,
    dataset: ChannelDataset | np.ndarray | torch.Tensor,
    sde: SDE,
    cfg: TrainConfig,
    p_drop: float = DEFAULT_P_DROP,
) -> Checkpoint:
    """Classifier-free training: shared weights for conditional and null scores."""
    if not 0 <= p_drop <= 1:
        raise ConditionError(f"p_drop must be in [0, 1], got {p_drop}")
    cond_channels = getattr(model.net.config, "cond_channels", 0)
    if cond_channels != CONDITION_CHANNELS:
        raise ShapeMismatchError(
            f"conditional training needs cond_channels={CONDITION_CHANNELS}, got {cond_channels}"
        )

    def condition_sampler(batch: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        return sample_training_conditions(batch, p_drop, generator)[0]

    logger.info(f"Conditional training with p_drop={p_drop}")
    return train(
        model,
        dataset,
        sde,
        cfg,
        condition_sampler=condition_sampler,
        kind=CheckpointKind.SCORE,
        extra={"conditional": True, "p_drop": float(p_drop)},
    )


def extrapolate(
    checkpoint: Checkpoint,
    condition: Condition,
    cfg: SamplerConfig,
    generator: torch.Generator | None = None,
) -> ChannelEstimate:
    """
    Sample the full channel given the observed sub-array.

    Score = cfg_score(s(x, t, c), s(x, t, null), w); with w = 0 the null
    branch is never evaluated. Observed entries of every sample are
    overwritten with the conditioned values before averaging.
    """
    if condition.null:
        raise ConditionError("extrapolate needs a non-null condition")
    model = checkpoint.model
    if not isinstance(model, ScoreModel):
        raise ConditionError(f"{checkpoint.kind.value} checkpoint cannot extrapolate")
    n_rx, n_tx = condition.mask.shape
    if checkpoint.data_shape[-2:] != (n_rx, n_tx):
        raise ShapeMismatchError(
            f"checkpoint shape {checkpoint.data_shape} does not match mask {(n_rx, n_tx)}"
        )

    cond = condition.to_tensor()
    w = cfg.cfg_weight

    def score_fn(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        c = cond.to(x.device, x.dtype).expand(x.shape[0], -1, -1, -1)
        s_cond = model(x, t, c)
        if w == 0:
            return s_cond
        return cfg_score(s_cond, model(x, t), w)

    result = run_predictor_corrector(
        score_fn, (cfg.n_samples, 2, n_rx, n_tx), model.sde, cfg, generator=generator
    )
    samples = result.channels()
    mask = condition.mask
    samples[:, mask] = condition.observed[mask]
    estimate = estimate_channel(samples)
    estimate.aborted = list(result.aborted)
    return estimate
