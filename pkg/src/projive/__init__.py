"""Probabilistic joint and individual variation explained for multi-block data."""

__version__ = "0.1.0"
__all__ = ["__version__"]
