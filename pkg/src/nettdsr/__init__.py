"""Learned (network) Tikhonov regularization for depth super-resolution at desk scale."""

__version__ = "0.1.0"
