"""Learned image codec with content-adaptive state-space transform blocks."""

__version__ = "0.1.0"
