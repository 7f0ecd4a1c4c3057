"""Numerical checks for twisted transfer operators of expanding interval maps and suspension flows."""

__version__ = "0.1.0"
