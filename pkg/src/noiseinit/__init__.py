"""Noise-target pretraining as an initialization, with NTK spectral analysis."""

__version__ = "0.1.0"
