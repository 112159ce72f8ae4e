"""Shared exception base for channel_diffusion."""


class ChannelDiffusionError(Exception):
    """Base exception for all library errors."""
    pass


class ShapeMismatchError(ChannelDiffusionError):
    """Array or model shapes are incompatible."""
    pass
