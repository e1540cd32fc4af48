"""Numerical rough-path toolkit."""
__version__ = "0.1.0"
