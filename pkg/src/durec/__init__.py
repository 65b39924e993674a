"""Density-based user representations: per-user GP retrieval over item embeddings."""

__version__ = "0.1.0"
