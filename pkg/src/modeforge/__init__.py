"""Trajectory forecasting with self-conditioned GAN modes and cluster-weighted training."""

__version__ = "0.1.0"
