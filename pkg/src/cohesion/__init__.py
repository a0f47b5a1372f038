"""Cohesion: diffusion-based emulation of chaotic 2-D dynamics guided by a
Koopman coherent-flow prior."""

__version__ = "0.1.0"
