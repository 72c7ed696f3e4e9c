"""Conditional GAN training with selective, condition-dependent diversity regularization."""

__version__ = "0.1.0"
