"""Averaged and simultaneous controllability of linear fractional systems with random parameters."""

__version__ = "0.1.0"
