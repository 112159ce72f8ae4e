"""Tests for Channel Diffusion."""
