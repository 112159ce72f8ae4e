"""
Measurement: downlink pilot observation Y = H P + N.

SNR convention: channels and pilot columns are power-normalized so that
E|(HP)_ij|^2 = 1, and the noise variance per complex entry is
sigma^2 = 10^(-snr_db/10).

Real embedding: x = [Re vec(H); Im vec(H)] with column-major vec. The map
H -> H P becomes the real block operator [[Re, -Im], [Im, Re]] of
(P^T kron I_Nr). The batched "plane" forms work on (B, 2, Nr, Nt) tensors,
which hold the same coordinates in a different order.
"""

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch

from ..core.errors import ChannelDiffusionError, ShapeMismatchError
from ..core.seeding import numpy_rng
from ..schemas.base import PilotKind


# =============================================================================
# EXCEPTIONS
# =============================================================================


class PilotError(ChannelDiffusionError):
    """Invalid pilot request."""
    pass


# =============================================================================
# DATA TRANSFER OBJECTS
# =============================================================================


@dataclass(frozen=True)
class PilotBlock:
    """Pilot matrix P (Nt, Np) with unit-norm columns."""

    P: np.ndarray
    kind: PilotKind
    seed: int

    @property
    def n_tx(self) -> int:
        return self.P.shape[0]

    @property
    def n_pilots(self) -> int:
        return self.P.shape[1]


@dataclass
class Observation:
    """Received pilot block and its noise level."""

    Y: np.ndarray
    sigma_n: float  # noise std per complex entry
    snr_db: float
    pilot_seed: int | None = None

    @property
    def noise_var_per_real(self) -> float:
        """Variance of each real coordinate of the noise."""
        return self.sigma_n**2 / 2

    def to_dict(self) -> dict[str, Any]:
        return {
            "Y_real": self.Y.real.tolist(),
            "Y_imag": self.Y.imag.tolist(),
            "sigma_n": self.sigma_n,
            "snr_db": self.snr_db,
            "pilot_seed": self.pilot_seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Observation":
        return cls(
            Y=np.asarray(data["Y_real"]) + 1j * np.asarray(data["Y_imag"]),
            sigma_n=float(data["sigma_n"]),
            snr_db=float(data["snr_db"]),
            pilot_seed=data.get("pilot_seed"),
        )


# =============================================================================
# PILOTS AND OBSERVATIONS
# =============================================================================


def make_pilots(n_tx: int, n_p: int, kind: PilotKind | str, seed: int) -> PilotBlock:
    """Random pilot block with unit-norm columns, deterministic given seed."""
    if n_tx < 1 or n_p < 1:
        raise PilotError(f"n_tx and n_p must be >= 1, got ({n_tx}, {n_p})")
    try:
        kind = PilotKind(kind)
    except ValueError:
        raise PilotError(f"Unknown pilot kind '{kind}'") from None

    rng = numpy_rng(seed, "pilots", kind.value)
    if kind == PilotKind.QPSK:
        re = rng.choice([-1.0, 1.0], size=(n_tx, n_p))
        im = rng.choice([-1.0, 1.0], size=(n_tx, n_p))
        P = (re + 1j * im) / math.sqrt(2 * n_tx)
    else:
        P = rng.standard_normal((n_tx, n_p)) + 1j * rng.standard_normal((n_tx, n_p))
    P = P / np.linalg.norm(P, axis=0, keepdims=True)
    return PilotBlock(P=P, kind=kind, seed=seed)


def noise_std(snr_db: float) -> float:
    """Per-complex-entry noise std for the SNR convention."""
    return math.sqrt(10 ** (-snr_db / 10))


def observe(
    H: np.ndarray,
    P: np.ndarray | PilotBlock,
    snr_db: float,
    rng: np.random.Generator,
) -> Observation:
    """Y = H P + N with i.i.d. CN(0, 10^(-snr/10)) noise."""
    pilot_seed = P.seed if isinstance(P, PilotBlock) else None
    P = P.P if isinstance(P, PilotBlock) else P
    if H.shape[1] != P.shape[0]:
        raise ShapeMismatchError(f"H {H.shape} and P {P.shape} are incompatible")
    sigma = noise_std(snr_db)
    shape = (H.shape[0], P.shape[1])
    noise = sigma / math.sqrt(2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    Y = H.astype(np.complex128) @ P + noise
    return Observation(Y=Y, sigma_n=sigma, snr_db=snr_db, pilot_seed=pilot_seed)


# =============================================================================
# REAL EMBEDDING
# =============================================================================


def vec(H: np.ndarray) -> np.ndarray:
    """Real embedding [Re vec(H); Im vec(H)], column-major."""
    flat = np.asarray(H).reshape(-1, order="F")
    return np.concatenate([flat.real, flat.imag])


def devec(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of vec for an (Nr, Ncols) matrix."""
    half = x.shape[0] // 2
    if 2 * half != x.shape[0] or half != shape[0] * shape[1]:
        raise ShapeMismatchError(f"vector of length {x.shape[0]} does not match {shape}")
    return (x[:half] + 1j * x[half:]).reshape(shape, order="F")


def planes_to_complex(x: torch.Tensor) -> torch.Tensor:
    """(B, 2, Nr, Nt) real planes -> (B, Nr, Nt) complex."""
    return torch.complex(x[:, 0], x[:, 1])


def complex_to_planes(H: torch.Tensor) -> torch.Tensor:
    """(B, Nr, Nt) complex -> (B, 2, Nr, Nt) real planes."""
    return torch.stack([H.real, H.imag], dim=1)


class RealLinearOp:
    """
    The pilot map H -> H P on the real embedding, and its adjoint.

    Adjoint: <HP, G>_R = Re tr((HP)^H G) = <H, G P^H>_R, so the adjoint of
    the real operator is G -> G P^H on the same embedding.
    """

    def __init__(self, P: np.ndarray | PilotBlock):
        self.P = np.asarray(P.P if isinstance(P, PilotBlock) else P, dtype=np.complex128)
        self._torch_cache: dict[tuple[torch.dtype, str], torch.Tensor] = {}

    @property
    def n_tx(self) -> int:
        return self.P.shape[0]

    @property
    def n_pilots(self) -> int:
        return self.P.shape[1]

    # -- numpy, flat real vectors ----------------------------------------------

    def forward(self, x: np.ndarray, n_rx: int) -> np.ndarray:
        H = devec(x, (n_rx, self.n_tx))
        return vec(H @ self.P)

    def adjoint(self, y: np.ndarray, n_rx: int) -> np.ndarray:
        G = devec(y, (n_rx, self.n_pilots))
        return vec(G @ self.P.conj().T)

    def matrix(self, n_rx: int) -> np.ndarray:
        """Explicit real block matrix of (P^T kron I_Nr)."""
        K = np.kron(self.P.T, np.eye(n_rx))
        return np.block([[K.real, -K.imag], [K.imag, K.real]])

    # -- torch, batched planes --------------------------------------------------

    def _pilots(self, like: torch.Tensor) -> torch.Tensor:
        cdtype = torch.complex128 if like.dtype == torch.float64 else torch.complex64
        key = (cdtype, str(like.device))
        if key not in self._torch_cache:
            self._torch_cache[key] = torch.as_tensor(self.P, dtype=cdtype, device=like.device)
        return self._torch_cache[key]

    def apply_planes(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 2, Nr, Nt) -> complex (B, Nr, Np)."""
        return planes_to_complex(x) @ self._pilots(x)

    def adjoint_planes(self, R: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """complex (B, Nr, Np) -> real planes (B, 2, Nr, Nt)."""
        P = self._pilots(like)
        return complex_to_planes(R @ P.conj().transpose(-2, -1)).to(like.dtype)


def real_operator(P: np.ndarray | PilotBlock) -> RealLinearOp:
    """Real linear operator for the pilot block P."""
    return RealLinearOp(P)
