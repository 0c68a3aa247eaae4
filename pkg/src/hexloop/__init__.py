"""Continual instruction-generation learning loop on a hex-grid card game."""

__version__ = "0.1.0"
