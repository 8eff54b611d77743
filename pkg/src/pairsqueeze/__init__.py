"""Cavity-mediated pair production and two-mode squeezing in multilevel atoms."""

__version__ = "0.1.0"
