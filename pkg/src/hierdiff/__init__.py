"""Hierarchical latent diffusion for conditional sequence generation."""

__version__ = "0.1.0"
