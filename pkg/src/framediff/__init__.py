"""Desk-scale latent-diffusion video frame interpolation."""

__version__ = "0.1.0"
