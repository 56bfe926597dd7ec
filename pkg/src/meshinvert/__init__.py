"""Mesh-based wave simulation, learned surrogates, and latent-space inversion."""

__version__ = "0.1.0"
