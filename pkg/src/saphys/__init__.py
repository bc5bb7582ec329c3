"""Physiological situation-awareness prediction toolkit."""

__version__ = "0.1.0"
