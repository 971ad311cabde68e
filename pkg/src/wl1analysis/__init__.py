"""Weighted l1-analysis recovery with prior support information."""

__version__ = "0.1.0"
