"""Channel Diffusion: score-based conditional diffusion for MIMO channels."""

__version__ = "1.0.0"
