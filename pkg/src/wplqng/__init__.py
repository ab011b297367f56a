"""Noise-aware quantum natural gradient with weighted-projective-line geometry."""

__version__ = "0.1.0"
