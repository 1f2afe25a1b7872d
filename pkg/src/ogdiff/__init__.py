"""Optimal Gaussian diffusion and clean-manifold guidance for joint trajectory generation."""

__version__ = "0.1.0"
