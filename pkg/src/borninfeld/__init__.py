"""Numerics for the 1+1 Born-Infeld equation near the self-similar blow-up family."""

__version__ = "0.1.0"
