"""Distributionally robust control barrier functions."""

__version__ = "0.1.0"
