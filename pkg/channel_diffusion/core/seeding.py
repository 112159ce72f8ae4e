"""Seeding utilities: counter-based stream derivation and content hashing."""

import hashlib

import numpy as np
import torch

# Seeds are folded into 63 bits so they fit both numpy and torch generators.
_SEED_MASK = (1 << 63) - 1


def hash_content(content: str | bytes) -> str:
    """Hex SHA-256 digest used for cell fingerprints and report stamps."""
    if isinstance(content, str):
        content = content.encode()
    return hashlib.sha256(content).hexdigest()


def verify_content_hash(content: str | bytes, expected_hash: str) -> bool:
    """True when the digest of content equals expected."""
    return hash_content(content) == expected_hash


def derive_seed(root_seed: int, *keys: object) -> int:
    """
    Derive a child seed from a root seed and an ordered key path.

    The derivation is counter-based: the seed of (root, "cell", 7) does not
    depend on how many other keys were derived before it, so adding test
    items or running cells concurrently never shifts existing streams.
    """
    material = "|".join([str(int(root_seed)), *(repr(k) for k in keys)])
    return int(hash_content(material)[:16], 16) & _SEED_MASK


def numpy_rng(seed: int, *keys: object) -> np.random.Generator:
    """Numpy generator for the stream (seed, *keys)."""
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.default_rng(seed)


def torch_generator(seed: int, *keys: object, device: str = "cpu") -> torch.Generator:
    """Torch generator for the stream (seed, *keys)."""
    if keys:
        seed = derive_seed(seed, *keys)
    generator = torch.Generator(device=device)
    generator.manual_seed(int(seed) & _SEED_MASK)
    return generator
