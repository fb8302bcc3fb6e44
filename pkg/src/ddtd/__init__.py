"""Data-driven topology design with PCA-compressed fields and a score-space VAE."""

__version__ = "0.1.0"
