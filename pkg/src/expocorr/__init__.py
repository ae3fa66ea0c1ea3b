"""Multi-scale, structure-aware exposure correction on Laplacian pyramids."""

__version__ = "0.1.0"
