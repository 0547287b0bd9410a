"""Explainable multivariate exchange-rate forecasting benchmark."""

__version__ = "0.1.0"
