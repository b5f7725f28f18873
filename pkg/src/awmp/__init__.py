"""Soft actor-critic with advantage-weighted mixture policies, built on numpy."""

__version__ = "0.1.0"
