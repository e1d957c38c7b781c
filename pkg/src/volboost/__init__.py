"""Gradient-boosted point and quantile forecasting of realized volatility."""

__version__ = "0.1.0"
