"""Interpretable multi-label phenotype prediction with exclusivity regularization."""

__version__ = "0.1.0"
