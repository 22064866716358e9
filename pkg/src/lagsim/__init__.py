"""Turing machine to Lag system compilation and proof-of-simulation checks."""

__version__ = "0.1.0"
