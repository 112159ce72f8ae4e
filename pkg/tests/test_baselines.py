"""
Tests for the classical estimators and the NMSE metric.

These tests verify:
1. NMSE: identities, floor and scale invariance
2. LS: exact recovery, minimum-norm solutions and the noise law
3. LMMSE: ridge equivalence, covariance validation and the LS limit
4. OMP: dictionary layout and exact sparse recovery
"""

import math

import numpy as np
import pytest
from scipy import linalg

from channel_diffusion.core.errors import ShapeMismatchError
from channel_diffusion.schemas.channels import UPAGeometry
from channel_diffusion.services.baselines import (
    BaselineError,
    CovarianceError,
    build_dictionary,
    lmmse_estimate,
    lmmse_filter,
    ls_estimate,
    nmse,
    nmse_linear,
    omp_estimate,
    omp_pursuit,
    omp_residual_threshold,
)
from channel_diffusion.services.measurement import Observation, make_pilots, noise_std, observe

from .conftest import complex_gaussian


# =============================================================================
# FIXTURES
# =============================================================================


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def unitary_pilots() -> np.ndarray:
    """Square DFT pilots: unit-norm, orthonormal columns."""
    n = 8
    return linalg.dft(n) / math.sqrt(n)


def _noiseless(H: np.ndarray, P: np.ndarray) -> Observation:
    return Observation(Y=H @ P, sigma_n=0.0, snr_db=math.inf)


# =============================================================================
# NMSE
# =============================================================================


class TestNMSE:
    """Normalized mean squared error."""

    def test_perfect_estimate_hits_floor(self, rng):
        """A perfect estimate reports the -100 dB floor."""
        H = complex_gaussian(rng, (4, 8))
        assert nmse(H, H) == -100.0
        assert nmse_linear(H, H) == 0.0

    def test_zero_estimate_is_zero_db(self, rng):
        """Estimating zero gives exactly 0 dB."""
        H = complex_gaussian(rng, (4, 8))
        assert nmse(np.zeros_like(H), H) == pytest.approx(0.0, abs=1e-12)

    def test_common_scaling_is_invariant(self, rng):
        """Scaling both estimate and truth leaves NMSE unchanged."""
        H = complex_gaussian(rng, (4, 8))
        H_hat = H + 0.1 * complex_gaussian(rng, (4, 8))
        assert nmse(3.5 * H_hat, 3.5 * H) == pytest.approx(nmse(H_hat, H), abs=1e-9)

    def test_all_zero_truth_is_an_error(self):
        """NMSE is undefined for an all-zero channel."""
        with pytest.raises(BaselineError):
            nmse(np.ones((2, 2)), np.zeros((2, 2)))


# =============================================================================
# LS
# =============================================================================


class TestLeastSquares:
    """Minimum-norm least squares."""

    def test_exact_with_unitary_pilots(self, rng, unitary_pilots):
        """Noiseless LS with square unitary pilots recovers H."""
        H = complex_gaussian(rng, (4, 8))
        H_hat = ls_estimate(_noiseless(H, unitary_pilots), unitary_pilots)
        np.testing.assert_allclose(H_hat, H, atol=1e-10)

    def test_underdetermined_is_minimum_norm(self, rng):
        """With Np < Nt the estimate fits Y and has no null-space component."""
        P = make_pilots(16, 6, "gaussian", seed=3).P
        H = complex_gaussian(rng, (4, 16))
        obs = _noiseless(H, P)
        H_hat = ls_estimate(obs, P)

        np.testing.assert_allclose(H_hat @ P, obs.Y, atol=1e-9)
        null = linalg.null_space(P.conj().T)
        np.testing.assert_allclose(H_hat @ null, 0, atol=1e-9)

    def test_noise_law_with_unitary_pilots(self, unitary_pilots):
        """Monte Carlo LS NMSE at 10 dB matches 10^(-snr/10) Nt/Np within 5%."""
        rng = np.random.default_rng(7)
        snr = 10.0
        errors, powers = [], []
        for _ in range(400):
            H = complex_gaussian(rng, (4, 8))
            H_hat = ls_estimate(observe(H, unitary_pilots, snr, rng), unitary_pilots)
            errors.append(np.sum(np.abs(H_hat - H) ** 2))
            powers.append(np.sum(np.abs(H) ** 2))
        measured = np.mean(errors) / np.mean(powers)
        assert measured == pytest.approx(10 ** (-snr / 10), rel=0.05)

    def test_shape_mismatch_rejected(self, rng, unitary_pilots):
        """Y with the wrong pilot count is rejected."""
        with pytest.raises(ShapeMismatchError):
            ls_estimate(np.zeros((4, 5), dtype=complex), unitary_pilots)


# =============================================================================
# LMMSE
# =============================================================================


class TestLMMSE:
    """Linear MMSE with a given channel covariance."""

    def test_identity_prior_equals_ridge(self, rng):
        """C = I reduces to Y P^H (P P^H + sigma^2 I)^-1."""
        P = make_pilots(8, 6, "qpsk", seed=1).P
        H = complex_gaussian(rng, (3, 8))
        obs = observe(H, P, 5.0, rng)
        sigma2 = obs.sigma_n**2

        ridge = obs.Y @ P.conj().T @ np.linalg.inv(P @ P.conj().T + sigma2 * np.eye(8))
        np.testing.assert_allclose(lmmse_estimate(obs, P), ridge, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(
            lmmse_estimate(obs, P, np.eye(24)), ridge, rtol=1e-8, atol=1e-10
        )

    def test_vanishing_noise_converges_to_ls(self, rng, unitary_pilots):
        """With full-rank pilots and tiny noise, LMMSE approaches LS."""
        H = complex_gaussian(rng, (2, 8))
        obs = _noiseless(H, unitary_pilots)
        H_hat = lmmse_estimate(obs, unitary_pilots, sigma_n=1e-6)
        np.testing.assert_allclose(H_hat, ls_estimate(obs, unitary_pilots), atol=1e-8)

    def test_not_worse_than_ls_on_gaussian_channels(self):
        """Averaged over draws, LMMSE is no worse than LS."""
        rng = np.random.default_rng(11)
        P = make_pilots(8, 4, "gaussian", seed=2).P
        ls_err, lmmse_err = [], []
        filt = lmmse_filter(P, None, noise_std(0.0), 2)
        for _ in range(200):
            H = complex_gaussian(rng, (2, 8))
            obs = observe(H, P, 0.0, rng)
            ls_err.append(nmse_linear(ls_estimate(obs, P), H))
            lmmse_err.append(nmse_linear(filt.apply(obs), H))
        assert np.mean(lmmse_err) <= np.mean(ls_err)

    def test_indefinite_covariance_rejected(self):
        """A covariance with a negative eigenvalue raises CovarianceError."""
        P = make_pilots(4, 4, "qpsk", seed=0).P
        C = np.eye(8)
        C[0, 0] = -1.0
        with pytest.raises(CovarianceError):
            lmmse_filter(P, C, 0.1, 2)

    def test_non_hermitian_covariance_rejected(self):
        """An asymmetric covariance raises CovarianceError."""
        P = make_pilots(4, 4, "qpsk", seed=0).P
        C = np.eye(8, dtype=complex)
        C[0, 1] = 0.5j
        with pytest.raises(CovarianceError):
            lmmse_filter(P, C, 0.1, 2)


# =============================================================================
# OMP
# =============================================================================


class TestAngularDictionary:
    """Oversampled angular grid."""

    def test_single_antenna_dictionary(self):
        """1x1 arrays with oversampling 1 give the dictionary [[1]]."""
        d = build_dictionary(UPAGeometry(rows=1, cols=1), UPAGeometry(rows=1, cols=1), 1)
        np.testing.assert_allclose(d.matrix(), [[1.0]])

    def test_column_count_and_norms(self):
        """os^2 Nr Nt columns, each unit norm."""
        rx, tx = UPAGeometry(rows=2, cols=2), UPAGeometry(rows=2, cols=4)
        d = build_dictionary(rx, tx, oversampling=2)
        D = d.matrix()
        assert d.n_columns == 4 * 4 * 8
        assert D.shape == (32, d.n_columns)
        np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-12)

    def test_atom_matches_matrix_column(self):
        """atom(g) is column g of the explicit dictionary, reshaped."""
        d = build_dictionary(UPAGeometry(rows=2, cols=2), UPAGeometry(rows=2, cols=2), 2)
        g = 17
        np.testing.assert_allclose(d.atom(g).reshape(-1, order="F"), d.matrix()[:, g])


class TestOMP:
    """Orthogonal matching pursuit over the joint dictionary."""

    @pytest.fixture
    def dictionary(self):
        return build_dictionary(UPAGeometry(rows=4, cols=4), UPAGeometry(rows=8, cols=8), 2)

    @pytest.fixture
    def pilots(self):
        return make_pilots(64, 32, "gaussian", seed=5).P

    def test_zero_atoms_returns_zero(self, rng, dictionary, pilots):
        """Sparsity 0 estimates the all-zero channel (0 dB NMSE)."""
        H = complex_gaussian(rng, (16, 64))
        H_hat = omp_estimate(_noiseless(H, pilots), pilots, dictionary, sparsity=0)
        assert np.all(H_hat == 0)
        assert nmse(H_hat, H) == pytest.approx(0.0, abs=1e-12)

    def test_exact_recovery_of_three_atoms(self, dictionary, pilots):
        """Noiseless channels on three grid atoms are recovered exactly."""
        # rx atoms drawn from distinct orthogonal u-bins
        columns = [
            t * dictionary.n_rx_atoms + r for r, t in [(1, 5), (11, 50), (22, 100)]
        ]
        gains = [1.0, 0.8j, -0.6]
        H = sum(c * dictionary.atom(g) for c, g in zip(gains, columns))

        result = omp_pursuit(_noiseless(H, pilots), pilots, dictionary, sparsity=3)
        assert sorted(result.support) == sorted(columns)
        assert nmse(result.H, H) <= -60.0

    def test_residual_never_increases(self, rng, dictionary, pilots):
        """Residual norms are nonincreasing over iterations."""
        H = complex_gaussian(rng, (16, 64))
        obs = observe(H, pilots, 10.0, rng)
        result = omp_pursuit(obs, pilots, dictionary, sparsity=8)
        norms = result.residual_norms
        assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))

    def test_threshold_stops_early(self, rng, dictionary, pilots):
        """A threshold above the initial residual selects nothing."""
        H = complex_gaussian(rng, (16, 64))
        obs = observe(H, pilots, 10.0, rng)
        result = omp_pursuit(obs, pilots, dictionary, sparsity=8, residual_threshold=1e9)
        assert result.support == []

    def test_sparsity_beyond_measurements_rejected(self, dictionary, pilots):
        """K > Nr Np is an error."""
        Y = np.zeros((16, 32), dtype=complex)
        with pytest.raises(BaselineError):
            omp_pursuit(Y, pilots, dictionary, sparsity=16 * 32 + 1)

    def test_residual_threshold_formula(self):
        """Noise-level threshold sigma_n sqrt(2 Nr Np)."""
        assert omp_residual_threshold(0.5, 16, 32) == pytest.approx(0.5 * math.sqrt(1024))
