"""Multivariate aggregation-error criterion for spatial change of support."""
__version__ = "0.1.0"
