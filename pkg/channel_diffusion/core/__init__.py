"""Core utilities: configuration, errors and seeding."""

from .config import Settings, configure_torch, get_settings
from .errors import ChannelDiffusionError, ShapeMismatchError
from .seeding import (
    derive_seed,
    hash_content,
    numpy_rng,
    torch_generator,
    verify_content_hash,
)

__all__ = [
    # Config
    "Settings",
    "get_settings",
    "configure_torch",
    # Errors
    "ChannelDiffusionError",
    "ShapeMismatchError",
    # Seeding
    "derive_seed",
    "hash_content",
    "numpy_rng",
    "torch_generator",
    "verify_content_hash",
]
