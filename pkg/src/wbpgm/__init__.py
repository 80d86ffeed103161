"""Modular probabilistic generative models with shared-variable composition."""

__version__ = "0.1.0"
