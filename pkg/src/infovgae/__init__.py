"""Disentangled non-negative belief embeddings for users and claims."""

__version__ = "0.1.0"
