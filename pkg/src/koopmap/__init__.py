"""Koopman spectral analysis and forecasting from ergodic time series."""

__version__ = "0.1.0"
