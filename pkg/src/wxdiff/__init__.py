"""Desk-scale mixed-weather degradation synthesis and conditional diffusion
image restoration."""

__version__ = "0.1.0"
