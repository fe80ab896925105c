"""Toolkit for building, filtering, and evaluating follow-up question datasets."""

__version__ = "0.1.0"
