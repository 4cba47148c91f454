"""Geodetic time-series cleaning, gap filling, forecasting and evaluation."""

__version__ = "0.1.0"
