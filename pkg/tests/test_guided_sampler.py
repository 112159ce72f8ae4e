"""
Tests for the guided predictor-corrector sampler.

These tests verify:
1. STEPS: predictor and corrector closed forms
2. GUIDANCE: the likelihood score and classifier-free combination
3. LOOP: prior moments, determinism and chain aborts
4. ESTIMATION: posterior sampling from noisy pilots
"""

import math

import numpy as np
import pytest
import torch
from scipy import linalg

from channel_diffusion.core.errors import ShapeMismatchError
from channel_diffusion.schemas.diffusion import SamplerConfig, SDEConfig
from channel_diffusion.services.baselines import lmmse_estimate, nmse, nmse_linear
from channel_diffusion.services.diffusion_core import gaussian_score_fn, make_sde
from channel_diffusion.services.guided_sampler import (
    SamplerAbortError,
    SamplingResult,
    cfg_score,
    corrector_step,
    estimate_channel,
    likelihood_score,
    posterior_sample,
    predictor_step,
    run_predictor_corrector,
)
from channel_diffusion.services.measurement import (
    Observation,
    RealLinearOp,
    complex_to_planes,
    make_pilots,
    observe,
    planes_to_complex,
)

from .conftest import complex_gaussian


# =============================================================================
# FIXTURES
# =============================================================================


@pytest.fixture
def sde(ve_sde):
    return make_sde(ve_sde)


@pytest.fixture
def small_problem():
    """Nr = 2, Nt = 3, Np = 2 with a noiseless observation."""
    rng = np.random.default_rng(4)
    P = make_pilots(3, 2, "gaussian", seed=1).P
    H = complex_gaussian(rng, (2, 3))
    return H, P, RealLinearOp(P)


def _planes(H: np.ndarray) -> torch.Tensor:
    return complex_to_planes(torch.as_tensor(H[None], dtype=torch.complex128))


def _constant_score(value: torch.Tensor):
    return lambda x, t: value.expand_as(x).clone()


# =============================================================================
# PREDICTOR AND CORRECTOR
# =============================================================================


class TestPredictor:
    """Reverse-diffusion predictor."""

    def test_zero_score_zero_noise_is_fixed_point(self, sde):
        """With s = 0 and z = 0 the state does not move."""
        x = torch.randn((3, 5), dtype=torch.float64)
        grid = sde.time_grid(10)
        out = predictor_step(
            x, 5, _constant_score(torch.zeros(1, dtype=torch.float64)), sde, grid,
            noise=torch.zeros_like(x),
        )
        torch.testing.assert_close(out, x, rtol=0, atol=0)

    def test_ve_step_closed_form(self, sde):
        """x = 10, s = -2, sigma_i^2 - sigma_{i-1}^2 = 3, z = 0 gives 4."""
        t_next = 0.0
        t_now = sde.sigma_inverse(math.sqrt(3.0 + float(sde.sigma(t_next)) ** 2))
        grid = np.array([t_next, t_now])
        x = torch.full((1, 1), 10.0, dtype=torch.float64)
        out = predictor_step(
            x, 1, _constant_score(torch.full((1,), -2.0, dtype=torch.float64)), sde, grid,
            noise=torch.zeros_like(x),
        )
        assert float(out) == pytest.approx(4.0, rel=1e-9)

    def test_vp_step_closed_form(self):
        """VP: x + (beta x / 2 + beta s) dt with z = 0."""
        vp = make_sde(SDEConfig(kind="VP"))
        grid = np.array([0.4, 0.5])
        x = torch.full((1, 1), 2.0, dtype=torch.float64)
        out = predictor_step(
            x, 1, _constant_score(torch.full((1,), -1.0, dtype=torch.float64)), vp, grid,
            noise=torch.zeros_like(x),
        )
        beta = vp.beta(0.5)
        assert float(out) == pytest.approx(2.0 + (0.5 * beta * 2.0 - beta) * 0.1, rel=1e-12)

    def test_index_outside_grid_rejected(self, sde):
        """Step index 0 has no predecessor."""
        with pytest.raises(IndexError):
            predictor_step(torch.zeros((1, 1)), 0, _constant_score(torch.zeros(1)), sde, sde.time_grid(4))


class TestCorrector:
    """Langevin corrector with SNR-controlled step size."""

    def test_zero_snr_leaves_state_unchanged(self, sde):
        """r = 0 means eps = 0."""
        x = torch.randn((4, 6), dtype=torch.float64)
        out = corrector_step(x, 0.5, gaussian_score_fn(0.0, 1.0, sde), snr=0.0, sde=sde)
        torch.testing.assert_close(out, x, rtol=0, atol=0)

    def test_zero_score_chain_is_frozen(self, sde):
        """A chain whose score is exactly zero is left unchanged."""
        x = torch.randn((2, 3), dtype=torch.float64)
        out = corrector_step(x, 0.5, _constant_score(torch.zeros(1, dtype=torch.float64)), 0.16, sde)
        torch.testing.assert_close(out, x, rtol=0, atol=0)

    def test_step_size_formula(self, sde):
        """eps = 2 (r ||z|| / ||s||)^2 and x' = x + eps s + sqrt(2 eps) z."""
        x = torch.zeros((1, 4), dtype=torch.float64)
        z = torch.tensor([[2.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        s = torch.tensor([4.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        out = corrector_step(x, 0.5, _constant_score(s), 0.16, sde, noise=z)
        eps = 2 * (0.16 * 2.0 / 4.0) ** 2
        expected = eps * 4.0 + math.sqrt(2 * eps) * 2.0
        assert float(out[0, 0]) == pytest.approx(expected, rel=1e-12)
        assert torch.all(out[0, 1:] == 0)

    def test_langevin_stationary_variance(self, sde):
        """Repeated corrections keep a Gaussian at its marginal variance within 5%."""
        t = 0.5
        target = 1.0 + float(sde.sigma(t)) ** 2
        generator = torch.Generator().manual_seed(0)
        x = math.sqrt(target) * torch.randn((2000, 64), generator=generator, dtype=torch.float64)
        score = gaussian_score_fn(0.0, 1.0, sde)
        for _ in range(400):
            x = corrector_step(x, t, score, 0.16, sde, generator=generator)
        assert float(x.var()) == pytest.approx(target, rel=0.05)


# =============================================================================
# GUIDANCE
# =============================================================================


class TestLikelihoodScore:
    """Noise-inflated likelihood gradient."""

    def test_zero_residual_gives_zero(self, sde, small_problem):
        """If Y = A x the likelihood score vanishes."""
        H, P, op = small_problem
        obs = Observation(Y=H @ P, sigma_n=0.1, snr_db=20.0)
        g = likelihood_score(_planes(H), obs, op, 0.5, sde)
        torch.testing.assert_close(g, torch.zeros_like(g), rtol=0, atol=1e-12)

    def test_infinite_noise_gives_zero(self, sde, small_problem):
        """As sigma_n grows the guidance disappears."""
        H, P, op = small_problem
        obs = Observation(Y=np.ones((2, 2), dtype=complex), sigma_n=1e12, snr_db=-240.0)
        g = likelihood_score(_planes(H), obs, op, 0.5, sde)
        assert float(g.abs().max()) < 1e-12

    def test_zero_weight_gives_zero(self, sde, small_problem):
        """zeta = 0 disables guidance."""
        H, P, op = small_problem
        obs = Observation(Y=np.ones((2, 2), dtype=complex), sigma_n=0.1, snr_db=20.0)
        g = likelihood_score(_planes(H), obs, op, 0.5, sde, zeta=0.0)
        assert torch.all(g == 0)

    @pytest.mark.parametrize("kind", ["VE", "VP"])
    def test_matches_finite_differences(self, kind, small_problem):
        """The guidance is the gradient of the Gaussian log-likelihood surrogate."""
        sde = make_sde(SDEConfig(kind=kind))
        H, P, op = small_problem
        rng = np.random.default_rng(8)
        Y = H @ P + 0.3 * complex_gaussian(rng, (2, 2))
        obs = Observation(Y=Y, sigma_n=0.2, snr_db=14.0)
        t, alpha = 0.3, 0.7
        m, std = float(sde.mean_coeff(t)), float(sde.std(t))
        variance = obs.noise_var_per_real + alpha * (std / m) ** 2

        x = _planes(complex_gaussian(rng, (2, 3)))

        def log_lik(state: torch.Tensor) -> float:
            H_state = planes_to_complex(state)[0].numpy() / m
            return -float(np.sum(np.abs(Y - H_state @ P) ** 2)) / (2 * variance)

        h = 1e-6
        fd = torch.zeros_like(x)
        for index in np.ndindex(*x.shape):
            up, down = x.clone(), x.clone()
            up[index] += h
            down[index] -= h
            fd[index] = (log_lik(up) - log_lik(down)) / (2 * h)

        g = likelihood_score(x, obs, op, t, sde, alpha=alpha)
        torch.testing.assert_close(g, fd, rtol=1e-5, atol=1e-6)

    def test_shape_mismatch_rejected(self, sde, small_problem):
        """Planes must match the pilot block."""
        H, P, op = small_problem
        obs = Observation(Y=H @ P, sigma_n=0.1, snr_db=20.0)
        with pytest.raises(ShapeMismatchError):
            likelihood_score(torch.zeros((1, 2, 2, 5)), obs, op, 0.5, sde)


class TestClassifierFree:
    """(1 + w) s_cond - w s_null."""

    def test_identities(self):
        """w = 0 returns s_cond; w = -1 returns s_null."""
        s_c, s_n = torch.randn(3, 4), torch.randn(3, 4)
        assert cfg_score(s_c, s_n, 0.0) is s_c
        torch.testing.assert_close(cfg_score(s_c, s_n, -1.0), s_n)

    def test_affine_in_weight(self):
        """The combination is s_c + w (s_c - s_n)."""
        s_c, s_n = torch.randn(3, 4), torch.randn(3, 4)
        torch.testing.assert_close(cfg_score(s_c, s_n, 2.5), s_c + 2.5 * (s_c - s_n))

    def test_shape_mismatch_rejected(self):
        """Both scores must have the same shape."""
        with pytest.raises(ShapeMismatchError):
            cfg_score(torch.zeros(2, 3), torch.zeros(3, 2), 1.0)


# =============================================================================
# SAMPLING LOOP
# =============================================================================


class TestPredictorCorrectorLoop:
    """Full reverse-time sampling."""

    @pytest.mark.parametrize("kind", ["VE", "VP"])
    def test_prior_moments(self, kind):
        """Sampling with the exact N(0, I) score reproduces mean 0 and variance 1."""
        sde = make_sde(SDEConfig(kind=kind))
        cfg = SamplerConfig(n_predictor_steps=500, n_corrector_steps_per=0)
        result = run_predictor_corrector(
            gaussian_score_fn(0.0, 1.0, sde), (4000, 8), sde, cfg,
            generator=torch.Generator().manual_seed(1), dtype=torch.float64,
        )
        assert abs(float(result.samples.mean())) < 0.05
        assert float(result.samples.var()) == pytest.approx(1.0, rel=0.05)
        assert result.aborted == []

    def test_same_generator_same_samples(self, sde):
        """Sampling is a pure function of the generator seed."""
        cfg = SamplerConfig(n_predictor_steps=20, n_corrector_steps_per=1)
        score = gaussian_score_fn(0.0, 1.0, sde)
        a = run_predictor_corrector(score, (4, 3), sde, cfg, torch.Generator().manual_seed(5))
        b = run_predictor_corrector(score, (4, 3), sde, cfg, torch.Generator().manual_seed(5))
        assert torch.equal(a.samples, b.samples)

    def test_nonfinite_chain_is_aborted(self, sde):
        """A chain that turns NaN is dropped and reported; the rest finish."""
        cfg = SamplerConfig(n_predictor_steps=10, n_corrector_steps_per=1)

        def score(x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
            s = -x / (1.0 + sde.std(t).reshape(-1, 1) ** 2)
            s[0] = float("nan")
            return s

        result = run_predictor_corrector(score, (4, 3), sde, cfg, torch.Generator().manual_seed(0))
        assert result.aborted == [0]
        assert torch.isnan(result.samples[0]).all()
        assert torch.isfinite(result.valid_samples).all()
        assert result.valid_samples.shape == (3, 3)

    def test_all_chains_aborted_raises(self, sde):
        """SamplerAbortError is raised only when every chain fails."""
        cfg = SamplerConfig(n_predictor_steps=5, n_corrector_steps_per=0)
        with pytest.raises(SamplerAbortError):
            run_predictor_corrector(
                lambda x, t: torch.full_like(x, float("nan")), (3, 2), sde, cfg,
                torch.Generator().manual_seed(0),
            )

    def test_x_init_shape_checked(self, sde):
        """A starting state of the wrong shape is rejected."""
        cfg = SamplerConfig(n_predictor_steps=5)
        with pytest.raises(ShapeMismatchError):
            run_predictor_corrector(
                gaussian_score_fn(0.0, 1.0, sde), (3, 2), sde, cfg, x_init=torch.zeros((2, 2))
            )


# =============================================================================
# ESTIMATION
# =============================================================================


class TestEstimation:
    """Posterior sampling and the sample mean."""

    def test_estimate_is_sample_mean(self):
        """Samples {H, -H} average to zero."""
        H = complex_gaussian(np.random.default_rng(0), (2, 3))
        estimate = estimate_channel(np.stack([H, -H]))
        np.testing.assert_allclose(estimate.mean, 0, atol=1e-15)
        assert estimate.n_samples == 2

    def test_no_samples_rejected(self):
        """An empty sample set cannot be averaged."""
        with pytest.raises(SamplerAbortError):
            estimate_channel(np.zeros((0, 2, 3), dtype=complex))

    def test_sampling_result_is_rescaled(self):
        """SamplingResult samples are divided by the normalization scale."""
        planes = torch.ones((2, 2, 1, 1), dtype=torch.float64)
        estimate = estimate_channel(SamplingResult(samples=planes), normalization_scale=2.0)
        np.testing.assert_allclose(estimate.mean, [[0.5 + 0.5j]])

    def test_observation_shape_checked(self, sde):
        """Y must be (Nr, Np)."""
        P = make_pilots(4, 2, "qpsk", seed=0)
        obs = Observation(Y=np.zeros((2, 3), dtype=complex), sigma_n=0.1, snr_db=20.0)
        with pytest.raises(ShapeMismatchError):
            posterior_sample(gaussian_score_fn(0.0, 0.5, sde), obs, P, sde, SamplerConfig())

    def test_high_snr_posterior_is_accurate(self, sde):
        """With full unitary pilots at 30 dB the posterior mean is within -10 dB."""
        rng = np.random.default_rng(2)
        P = linalg.dft(4) / 2.0
        H = complex_gaussian(rng, (2, 4))
        obs = observe(H, P, 30.0, rng)
        cfg = SamplerConfig(n_predictor_steps=200, n_corrector_steps_per=1, n_samples=16)

        result = posterior_sample(
            gaussian_score_fn(0.0, 0.5, sde), obs, P, sde, cfg, torch.Generator().manual_seed(0)
        )
        assert len(result.residual_norms) == 200
        assert result.residual_norms[-1] < result.residual_norms[0]
        assert nmse(estimate_channel(result).mean, H) <= -10.0


@pytest.mark.slow
class TestGaussianOracle:
    """On an i.i.d. Gaussian prior the posterior mean approaches LMMSE."""

    def test_matches_lmmse(self, sde):
        """16x64 array, 32 pilots at 10 dB: linear NMSE within 5% of LMMSE."""
        rng = np.random.default_rng(10)
        P = make_pilots(64, 32, "qpsk", seed=3).P
        cfg = SamplerConfig(n_predictor_steps=200, n_corrector_steps_per=1, n_samples=64)
        score = gaussian_score_fn(0.0, 0.5, sde)
        dm, lmmse = [], []
        # 8 channels x 64 chains = 512 posterior samples
        for index in range(8):
            H = complex_gaussian(rng, (16, 64))
            obs = observe(H, P, 10.0, rng)
            result = posterior_sample(
                score, obs, P, sde, cfg, torch.Generator().manual_seed(index)
            )
            estimate = estimate_channel(result)
            assert estimate.n_samples == 64
            dm.append(nmse_linear(estimate.mean, H))
            lmmse.append(nmse_linear(lmmse_estimate(obs, P), H))
        assert abs(np.mean(dm) / np.mean(lmmse) - 1.0) <= 0.05
