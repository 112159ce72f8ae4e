"""
Baselines: classical channel estimators and the NMSE metric.

- LS:    H = Y P^+ (minimum-norm pseudo-inverse)
- LMMSE: vec-domain Wiener filter h = C A^H (A C A^H + s^2 I)^-1 y,
         A = P^T kron I_Nr, under an identity or sample covariance
- OMP:   greedy sparse recovery over an oversampled 2-D angular dictionary
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..schemas.channels import UPAGeometry
from .channel_data import steering_vector_uv
from .measurement import Observation, PilotBlock


logger = logging.getLogger(__name__)

NMSE_FLOOR_DB = -100.0
PINV_RCOND = 1e-10


# =============================================================================
# EXCEPTIONS
# =============================================================================


class BaselineError(ChannelDiffusionError):
    """Invalid input to a classical estimator or the metric."""
    pass


class CovarianceError(BaselineError):
    """Channel covariance is not Hermitian positive semi-definite."""
    pass


def _pilot_matrix(P: np.ndarray | PilotBlock) -> np.ndarray:
    return np.asarray(P.P if isinstance(P, PilotBlock) else P, dtype=np.complex128)


def _received(obs: Observation | np.ndarray) -> np.ndarray:
    return np.asarray(obs.Y if isinstance(obs, Observation) else obs, dtype=np.complex128)


# =============================================================================
# METRIC
# =============================================================================


def nmse_linear(estimate: np.ndarray, truth: np.ndarray) -> float:
    """||H_hat - H||_F^2 / ||H||_F^2."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ShapeMismatchError(f"estimate {estimate.shape} vs truth {truth.shape}")
    power = float(np.sum(np.abs(truth) ** 2))
    if not power > 0:
        raise BaselineError("NMSE is undefined for an all-zero true channel")
    return float(np.sum(np.abs(estimate - truth) ** 2)) / power


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """NMSE in dB, floored at -100 dB."""
    linear = nmse_linear(estimate, truth)
    if linear <= 10 ** (NMSE_FLOOR_DB / 10):
        return NMSE_FLOOR_DB
    return 10 * math.log10(linear)


# =============================================================================
# LS
# =============================================================================


def ls_estimate(obs: Observation | np.ndarray, P: np.ndarray | PilotBlock) -> np.ndarray:
    """Minimum-norm least squares Y P^+."""
    P = _pilot_matrix(P)
    Y = _received(obs)
    if Y.shape[1] != P.shape[1]:
        raise ShapeMismatchError(f"Y {Y.shape} and P {P.shape} are incompatible")
    return Y @ np.linalg.pinv(P, rcond=PINV_RCOND)


# =============================================================================
# LMMSE
# =============================================================================


@dataclass
class LMMSEFilter:
    """Precomputed Wiener matrix for one (pilots, covariance, noise level)."""

    W: np.ndarray
    n_rx: int
    n_tx: int
    n_pilots: int

    def apply(self, obs: Observation | np.ndarray) -> np.ndarray:
        Y = _received(obs)
        if Y.shape != (self.n_rx, self.n_pilots):
            raise ShapeMismatchError(f"Y {Y.shape} != ({self.n_rx}, {self.n_pilots})")
        h = self.W @ Y.reshape(-1, order="F")
        return h.reshape((self.n_rx, self.n_tx), order="F")


def check_covariance(C: np.ndarray, tol: float = 1e-8) -> None:
    """Raise CovarianceError unless C is Hermitian PSD (to tolerance)."""
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise CovarianceError(f"covariance must be square, got {C.shape}")
    scale = max(float(np.max(np.abs(C))), 1.0)
    if not np.allclose(C, C.conj().T, atol=tol * scale):
        raise CovarianceError("covariance is not Hermitian")
    min_eig = float(linalg.eigvalsh(C)[0])
    if min_eig < -tol * scale:
        raise CovarianceError(f"covariance is not PSD (min eigenvalue {min_eig:.3e})")


def lmmse_filter(
    P: np.ndarray | PilotBlock,
    C_h: np.ndarray | None,
    sigma_n: float,
    n_rx: int,
) -> LMMSEFilter:
    """Build W = C A^H (A C A^H + sigma_n^2 I)^-1; C_h None means identity."""
    P = _pilot_matrix(P)
    n_tx, n_p = P.shape
    dim = n_rx * n_tx
    if C_h is None:
        C = np.eye(dim, dtype=np.complex128)
    else:
        C = np.asarray(C_h, dtype=np.complex128)
        if C.shape != (dim, dim):
            raise ShapeMismatchError(f"covariance {C.shape} does not match NrNt={dim}")
        check_covariance(C)

    A = np.kron(P.T, np.eye(n_rx))
    M = A @ C @ A.conj().T + sigma_n**2 * np.eye(n_rx * n_p)
    # W^H = M^-1 A C since both M and C are Hermitian
    W = linalg.solve(M, A @ C, assume_a="her").conj().T
    return LMMSEFilter(W=W, n_rx=n_rx, n_tx=n_tx, n_pilots=n_p)


def lmmse_estimate(
    obs: Observation,
    P: np.ndarray | PilotBlock,
    C_h: np.ndarray | None = None,
    sigma_n: float | None = None,
) -> np.ndarray:
    """One-shot LMMSE; sigma_n defaults to the observation's noise level."""
    sigma = obs.sigma_n if sigma_n is None else sigma_n
    return lmmse_filter(P, C_h, sigma, obs.Y.shape[0]).apply(obs)


# =============================================================================
# ANGULAR DICTIONARY AND OMP
# =============================================================================


def _grid_split(oversampling: int) -> tuple[int, int]:
    a = max(f for f in range(1, int(math.isqrt(oversampling)) + 1) if oversampling % f == 0)
    return a, oversampling // a


def _array_atoms(geom: UPAGeometry, oversampling: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = _grid_split(oversampling)
    g_u, g_v = geom.rows * a, geom.cols * b
    u = -1.0 + 2.0 * np.arange(g_u) / g_u
    v = -1.0 + 2.0 * np.arange(g_v) / g_v
    grid = np.array([(uu, vv) for uu in u for vv in v])
    atoms = np.stack([steering_vector_uv(geom, uu, vv) for uu, vv in grid], axis=1)
    return atoms, grid


@dataclass
class AngularDictionary:
    """
    Separable dictionary of vec(a_r a_t^H) atoms.

    Joint column g = g_t * G_r + g_r equals kron(conj(a_t[g_t]), a_r[g_r]).
    """

    rx_atoms: np.ndarray
    tx_atoms: np.ndarray
    rx_grid: np.ndarray
    tx_grid: np.ndarray
    oversampling: int

    @property
    def n_rx_atoms(self) -> int:
        return self.rx_atoms.shape[1]

    @property
    def n_tx_atoms(self) -> int:
        return self.tx_atoms.shape[1]

    @property
    def n_columns(self) -> int:
        return self.n_rx_atoms * self.n_tx_atoms

    def split_index(self, g: int) -> tuple[int, int]:
        """Joint column -> (g_r, g_t)."""
        g_t, g_r = divmod(g, self.n_rx_atoms)
        return g_r, g_t

    def atom(self, g: int) -> np.ndarray:
        """Column g reshaped as an (Nr, Nt) channel."""
        g_r, g_t = self.split_index(g)
        return np.outer(self.rx_atoms[:, g_r], self.tx_atoms[:, g_t].conj())

    def matrix(self) -> np.ndarray:
        """Explicit (NrNt, n_columns) dictionary."""
        return np.kron(self.tx_atoms.conj(), self.rx_atoms)


def build_dictionary(
    rx_geom: UPAGeometry, tx_geom: UPAGeometry, oversampling: int = 2
) -> AngularDictionary:
    """Oversampled u-v grid dictionary; oversampling atoms per antenna per array."""
    if oversampling < 1:
        raise BaselineError(f"oversampling must be >= 1, got {oversampling}")
    rx_atoms, rx_grid = _array_atoms(rx_geom, oversampling)
    tx_atoms, tx_grid = _array_atoms(tx_geom, oversampling)
    return AngularDictionary(
        rx_atoms=rx_atoms,
        tx_atoms=tx_atoms,
        rx_grid=rx_grid,
        tx_grid=tx_grid,
        oversampling=oversampling,
    )


@dataclass
class OMPResult:
    H: np.ndarray
    support: list[int] = field(default_factory=list)
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.complex128))
    residual_norms: list[float] = field(default_factory=list)


def omp_pursuit(
    obs: Observation | np.ndarray,
    P: np.ndarray | PilotBlock,
    dictionary: AngularDictionary,
    sparsity: int,
    residual_threshold: float | None = None,
) -> OMPResult:
    """
    OMP on the sensing matrix (P^T kron I) D.

    Correlations use the separable form A_r^H R P^H A_t normalized by
    ||a_t^H P||. Stops after `sparsity` atoms or once the residual norm is
    at or below residual_threshold.
    """
    P = _pilot_matrix(P)
    Y = _received(obs)
    n_rx, n_p = Y.shape
    if P.shape[1] != n_p or dictionary.rx_atoms.shape[0] != n_rx:
        raise ShapeMismatchError(f"Y {Y.shape}, P {P.shape} and dictionary are incompatible")
    if sparsity < 0:
        raise BaselineError(f"sparsity must be >= 0, got {sparsity}")
    if sparsity > n_rx * n_p:
        raise BaselineError(f"sparsity {sparsity} exceeds the {n_rx * n_p} measurements")

    y = Y.reshape(-1, order="F")
    tx_proj = dictionary.tx_atoms.conj().T @ P  # (G_t, Np): a_t^H P
    tx_norms = np.linalg.norm(tx_proj, axis=1)
    tx_norms = np.where(tx_norms > 0, tx_norms, np.inf)

    support: list[int] = []
    columns: list[np.ndarray] = []
    coeffs = np.zeros(0, dtype=np.complex128)
    R = Y.copy()
    residual_norms = [float(np.linalg.norm(R))]

    for _ in range(sparsity):
        if residual_threshold is not None and residual_norms[-1] <= residual_threshold:
            break
        corr = np.abs(dictionary.rx_atoms.conj().T @ R @ P.conj().T @ dictionary.tx_atoms)
        corr = corr / tx_norms[None, :]
        g_r, g_t = np.unravel_index(int(np.argmax(corr)), corr.shape)
        g = int(g_t) * dictionary.n_rx_atoms + int(g_r)
        if g in support:
            break
        support.append(g)
        columns.append(np.outer(dictionary.rx_atoms[:, g_r], tx_proj[g_t]).reshape(-1, order="F"))

        Phi = np.stack(columns, axis=1)
        coeffs = linalg.lstsq(Phi, y)[0]
        R = (y - Phi @ coeffs).reshape((n_rx, n_p), order="F")
        residual_norms.append(float(np.linalg.norm(R)))

    H = np.zeros((n_rx, dictionary.tx_atoms.shape[0]), dtype=np.complex128)
    for g, c in zip(support, coeffs):
        H += c * dictionary.atom(g)
    return OMPResult(H=H, support=support, coefficients=coeffs, residual_norms=residual_norms)


def omp_residual_threshold(sigma_n: float, n_rx: int, n_pilots: int) -> float:
    """Noise-level stopping rule sigma_n * sqrt(2 Nr Np)."""
    return sigma_n * math.sqrt(2 * n_rx * n_pilots)


def omp_estimate(
    obs: Observation | np.ndarray,
    P: np.ndarray | PilotBlock,
    dictionary: AngularDictionary,
    sparsity: int,
    residual_threshold: float | None = None,
) -> np.ndarray:
    """Channel synthesized from the OMP solution."""
    return omp_pursuit(obs, P, dictionary, sparsity, residual_threshold).H
