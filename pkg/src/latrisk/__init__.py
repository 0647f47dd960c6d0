"""Latent-context distributional safe RL with calibrated deployment-time risk adaptation."""

__version__ = "0.1.0"
