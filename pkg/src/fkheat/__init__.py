"""fkheat - Feynman-Kac formulae for the heat equation driven by fractional Brownian sheet noise."""

__all__ = ["__version__"]

__version__ = "1.0.0"
