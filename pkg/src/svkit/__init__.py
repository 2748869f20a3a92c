"""Batch speaker-verification evaluation toolkit."""

__version__ = "0.1.0"
