"""Numerical laboratory for epsilon-regularity of varifolds and Brakke flows."""

__version__ = "0.1.0"
