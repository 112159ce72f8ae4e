"""
Guided Sampler: reverse-time predictor-corrector sampling.

One loop serves three callers: posterior sampling for channel estimation
(prior score + likelihood guidance), conditional extrapolation (classifier-free
score combination) and latent denoising (noise-matched start, t_start < 1).

Loop order for i = N..1: M corrector steps at t_i, then one predictor step
t_i -> t_{i-1}. The returned state is the one at t_0 (sigma_min for VE).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from tqdm.auto import tqdm

from ..core.config import get_settings
from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..schemas.base import SDEKind
from ..schemas.diffusion import SamplerConfig
from .diffusion_core import SDE, ScoreFn, VPSDE
from .measurement import Observation, PilotBlock, RealLinearOp, planes_to_complex


logger = logging.getLogger(__name__)

Diagnostic = Callable[[torch.Tensor], torch.Tensor]


# =============================================================================
# EXCEPTIONS
# =============================================================================


class SamplerAbortError(ChannelDiffusionError):
    """Every chain of a sampling run produced non-finite values."""
    pass


# =============================================================================
# DATA TRANSFER OBJECTS
# =============================================================================


@dataclass
class SamplingResult:
    """Terminal states of K chains; aborted chains hold NaN."""

    samples: torch.Tensor
    aborted: list[int] = field(default_factory=list)
    residual_norms: list[float] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def valid_samples(self) -> torch.Tensor:
        keep = [i for i in range(self.n_chains) if i not in set(self.aborted)]
        return self.samples[keep]

    def channels(self, normalization_scale: float = 1.0) -> np.ndarray:
        """Surviving chains as complex (K', Nr, Nt) channels in physical units."""
        H = planes_to_complex(self.valid_samples.to(torch.float64)).cpu().numpy()
        return H / normalization_scale


@dataclass
class ChannelEstimate:
    """Point estimate (mean of samples) plus the samples themselves."""

    mean: np.ndarray
    samples: np.ndarray
    diagnostics: list[float] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


# =============================================================================
# SCORE COMBINATION AND GUIDANCE
# =============================================================================


def cfg_score(s_cond: torch.Tensor, s_null: torch.Tensor, w: float) -> torch.Tensor:
    """Classifier-free combination (1 + w) s_cond - w s_null."""
    if s_cond.shape != s_null.shape:
        raise ShapeMismatchError(f"{tuple(s_cond.shape)} vs {tuple(s_null.shape)}")
    if w == 0:
        return s_cond
    return (1.0 + w) * s_cond - w * s_null


def _observation_tensor(Y: np.ndarray | torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    cdtype = torch.complex128 if like.dtype == torch.float64 else torch.complex64
    return torch.as_tensor(Y, dtype=cdtype, device=like.device)


def likelihood_score(
    x_t: torch.Tensor,
    obs: Observation,
    op: RealLinearOp,
    t: torch.Tensor | float,
    sde: SDE,
    alpha: float = 1.0,
    zeta: float = 1.0,
) -> torch.Tensor:
    """
    zeta A^T (y - A x_t) / (sigma_n^2 + alpha sigma(t)^2) on (B, 2, Nr, Nt) planes.

    sigma_n^2 is the per-real-coordinate noise variance. For VP the state is
    rescaled by the mean coefficient m before the residual is formed, and the
    gradient picks up a factor 1/m.
    """
    if x_t.ndim != 4 or x_t.shape[1] != 2 or x_t.shape[3] != op.n_tx:
        raise ShapeMismatchError(f"planes {tuple(x_t.shape)} do not match P {op.P.shape}")
    if zeta == 0:
        return torch.zeros_like(x_t)
    if not isinstance(t, torch.Tensor):
        t = torch.full((x_t.shape[0],), float(t), dtype=x_t.dtype, device=x_t.device)
    m = sde.mean_coeff(t).reshape(-1, 1, 1, 1)
    std = sde.std(t).reshape(-1, 1, 1, 1)
    x0_hat = x_t / m
    variance = obs.noise_var_per_real + alpha * (std / m) ** 2

    Y = _observation_tensor(obs.Y, x_t)
    R = Y.unsqueeze(0) - op.apply_planes(x0_hat)
    grad = op.adjoint_planes(R, like=x_t)
    return zeta * grad / (variance * m)


def guided_score_fn(
    prior_score: ScoreFn,
    obs: Observation,
    op: RealLinearOp,
    sde: SDE,
    cfg: SamplerConfig,
) -> ScoreFn:
    """Prior score plus likelihood guidance (Bayes rule for the posterior score)."""

    def score(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        s = prior_score(x, t)
        if cfg.guidance_scale == 0:
            return s
        return s + likelihood_score(
            x, obs, op, t, sde, alpha=cfg.likelihood_inflation, zeta=cfg.guidance_scale
        )

    return score


# =============================================================================
# PREDICTOR AND CORRECTOR
# =============================================================================


def _time(t: float, x: torch.Tensor) -> torch.Tensor:
    return torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)


def _randn_like(x: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
    return torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)


def _chain_norms(v: torch.Tensor) -> torch.Tensor:
    return v.flatten(start_dim=1).norm(dim=1).reshape(-1, *([1] * (v.ndim - 1)))


def predictor_step(
    x: torch.Tensor,
    i: int,
    score_fn: ScoreFn,
    sde: SDE,
    grid: np.ndarray,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Reverse step from grid[i] to grid[i-1].

    VE: x + (s_i^2 - s_{i-1}^2) score + sqrt(s_i^2 - s_{i-1}^2) z
    VP: x + (beta x / 2 + beta score) dt + sqrt(beta dt) z
    """
    if not 1 <= i < len(grid):
        raise IndexError(f"predictor step index {i} outside [1, {len(grid) - 1}]")
    t_now, t_next = float(grid[i]), float(grid[i - 1])
    score = score_fn(x, _time(t_now, x))
    z = _randn_like(x, generator) if noise is None else noise

    if sde.kind == SDEKind.VE:
        dvar = sde.sigma(t_now) ** 2 - sde.sigma(t_next) ** 2
        return x + dvar * score + dvar**0.5 * z

    assert isinstance(sde, VPSDE)
    dt = t_now - t_next
    beta = sde.beta(t_now)
    return x + (0.5 * beta * x + beta * score) * dt + (beta * dt) ** 0.5 * z


def corrector_step(
    x: torch.Tensor,
    t: float,
    score_fn: ScoreFn,
    snr: float,
    sde: SDE | None = None,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Langevin step with eps = 2 a (r ||z|| / ||s||)^2 per chain.

    a = 1 for VE and 1 - beta(t)/N for VP. Chains whose score norm is zero
    are left unchanged.
    """
    score = score_fn(x, _time(t, x))
    z = _randn_like(x, generator) if noise is None else noise
    s_norm = _chain_norms(score)
    z_norm = _chain_norms(z)

    a = 1.0
    if sde is not None and sde.kind == SDEKind.VP:
        assert isinstance(sde, VPSDE)
        a = max(1.0 - sde.beta(t) / sde.N, 1e-12)

    safe = torch.where(s_norm > 0, s_norm, torch.ones_like(s_norm))
    eps = 2.0 * a * (snr * z_norm / safe) ** 2
    eps = torch.where(s_norm > 0, eps, torch.zeros_like(eps))
    return x + eps * score + torch.sqrt(2.0 * eps) * z


# =============================================================================
# PREDICTOR-CORRECTOR LOOP
# =============================================================================


def run_predictor_corrector(
    score_fn: ScoreFn,
    shape: tuple[int, ...],
    sde: SDE,
    cfg: SamplerConfig,
    generator: torch.Generator | None = None,
    x_init: torch.Tensor | None = None,
    t_start: float = 1.0,
    diagnostic: Diagnostic | None = None,
    dtype: torch.dtype = torch.float32,
    device: str | torch.device = "cpu",
) -> SamplingResult:
    """
    Run K = shape[0] chains from t_start down to the end of the time grid.

    Without x_init the chains start from the prior N(0, prior_std^2 I).
    Chains that turn non-finite are frozen at zero, logged, and returned as
    NaN; SamplerAbortError is raised only when every chain aborts.
    """
    if x_init is None:
        x = sde.prior_std * torch.randn(shape, generator=generator, dtype=dtype, device=device)
    else:
        if tuple(x_init.shape) != tuple(shape):
            raise ShapeMismatchError(f"x_init {tuple(x_init.shape)} != {tuple(shape)}")
        x = x_init.clone()

    grid = sde.time_grid(cfg.n_predictor_steps, t_start)
    alive = torch.ones(shape[0], dtype=torch.bool, device=x.device)
    residual_norms: list[float] = []

    def check(state: torch.Tensor, step: int) -> torch.Tensor:
        finite = torch.isfinite(state.flatten(start_dim=1)).all(dim=1)
        newly = alive & ~finite
        if newly.any():
            for chain in torch.nonzero(newly).flatten().tolist():
                logger.warning(f"Chain {chain} aborted at step {step}: non-finite state")
            alive.logical_and_(finite)
        mask = alive.reshape(-1, *([1] * (state.ndim - 1)))
        return torch.where(mask, state, torch.zeros_like(state))

    settings = get_settings()
    steps = tqdm(
        range(cfg.n_predictor_steps, 0, -1),
        desc="sample",
        leave=False,
        disable=not settings.show_progress,
    )
    with torch.no_grad():
        for i in steps:
            t_i = float(grid[i])
            for _ in range(cfg.n_corrector_steps_per):
                x = corrector_step(x, t_i, score_fn, cfg.corrector_snr, sde, generator)
                x = check(x, i)
            x = predictor_step(x, i, score_fn, sde, grid, generator)
            x = check(x, i)
            if diagnostic is not None and alive.any():
                residual_norms.append(float(diagnostic(x[alive]).mean()))

    aborted = torch.nonzero(~alive).flatten().tolist()
    if len(aborted) == shape[0]:
        raise SamplerAbortError(f"All {shape[0]} chains aborted")
    if aborted:
        x[~alive] = float("nan")
    return SamplingResult(samples=x, aborted=aborted, residual_norms=residual_norms)


# =============================================================================
# CHANNEL ESTIMATION
# =============================================================================


def posterior_sample(
    score_fn: ScoreFn,
    obs: Observation,
    pilots: RealLinearOp | PilotBlock | np.ndarray,
    sde: SDE,
    cfg: SamplerConfig,
    generator: torch.Generator | None = None,
    n_rx: int | None = None,
    normalization_scale: float = 1.0,
) -> SamplingResult:
    """
    K posterior chains for H given Y = H P + N.

    The score model lives in normalized units; the observation is scaled in
    and callers scale the samples back out with SamplingResult.channels.
    """
    op = pilots if isinstance(pilots, RealLinearOp) else RealLinearOp(pilots)
    n_rx = n_rx or obs.Y.shape[0]
    if obs.Y.shape != (n_rx, op.n_pilots):
        raise ShapeMismatchError(f"Y {obs.Y.shape} does not match ({n_rx}, {op.n_pilots})")

    scaled = Observation(
        Y=obs.Y * normalization_scale,
        sigma_n=obs.sigma_n * normalization_scale,
        snr_db=obs.snr_db,
        pilot_seed=obs.pilot_seed,
    )
    Y = scaled.Y

    def residual(x: torch.Tensor) -> torch.Tensor:
        R = _observation_tensor(Y, x).unsqueeze(0) - op.apply_planes(x)
        return R.abs().flatten(start_dim=1).norm(dim=1)

    shape = (cfg.n_samples, 2, n_rx, op.n_tx)
    return run_predictor_corrector(
        guided_score_fn(score_fn, scaled, op, sde, cfg),
        shape,
        sde,
        cfg,
        generator=generator,
        diagnostic=residual,
    )


def estimate_channel(
    samples: np.ndarray | SamplingResult,
    normalization_scale: float = 1.0,
) -> ChannelEstimate:
    """Mean of K channel samples (complex (K, Nr, Nt) or a SamplingResult)."""
    diagnostics: list[float] = []
    aborted: list[int] = []
    if isinstance(samples, SamplingResult):
        diagnostics = list(samples.residual_norms)
        aborted = list(samples.aborted)
        samples = samples.channels(normalization_scale)
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise SamplerAbortError("No channel samples to average")
    return ChannelEstimate(
        mean=samples.mean(axis=0),
        samples=samples,
        diagnostics=diagnostics,
        aborted=aborted,
    )
