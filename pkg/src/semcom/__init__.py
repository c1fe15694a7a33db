"""Learned semantic video transmission over simulated noisy channels."""

__version__ = "0.1.0"
