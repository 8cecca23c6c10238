"""Quasi-dynamic energy flow in coupled heat and electricity networks."""

__version__ = "0.1.0"
