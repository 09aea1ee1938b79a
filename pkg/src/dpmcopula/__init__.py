"""Dirichlet process mixtures of elliptical copulas for mixed-type imputation."""

__version__ = "0.1.0"
